"""SELFIES tokenizer and valence-constrained graph decoder.

Supported symbols: atoms ``C N O S P F Cl Br I H`` with an optional ``=`` or
``#`` bond prefix, ``[Branch1]``/``[Branch2]`` and ``[Ring1]``/``[Ring2]``
with the same prefixes. The decoder follows the SELFIES v2 derivation
grammar: a derivation state (remaining valence of the previous atom) clamps
every bond order, branch and ring symbols read their length from the
following index symbols, and ring bonds are formed after the main
derivation. Decoding never fails on a tokenized input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import UnbalancedBracket, UnknownToken

ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "H")
VALENCE = {"C": 4, "N": 3, "O": 2, "S": 6, "P": 5,
           "F": 1, "Cl": 1, "Br": 1, "I": 1, "H": 1}
BOND_PREFIXES = {"": 1, "=": 2, "#": 3}

# Index symbol alphabet of SELFIES v2; any other symbol reads as 0.
INDEX_ALPHABET = (
    "[C]", "[Ring1]", "[Ring2]",
    "[Branch1]", "[=Branch1]", "[#Branch1]",
    "[Branch2]", "[=Branch2]", "[#Branch2]",
    "[O]", "[N]", "[=N]", "[=C]", "[#C]", "[S]", "[P]",
)
_INDEX_CODE = {s: i for i, s in enumerate(INDEX_ALPHABET)}

RING_DUPLICATE_POLICIES = ("drop", "merge")


@dataclass(frozen=True)
class SelfiesToken:
    text: str
    kind: str  # "atom" | "bonded_atom" | "branch_open" | "ring_closure"
    order: int  # bond order carried by the prefix (1..3)
    element: str | None = None
    size: int = 0  # number of index symbols that follow a branch/ring


def _build_vocab() -> dict[str, SelfiesToken]:
    vocab = {}
    for el in ELEMENTS:
        for prefix, order in BOND_PREFIXES.items():
            text = f"[{prefix}{el}]"
            kind = "atom" if not prefix else "bonded_atom"
            vocab[text] = SelfiesToken(text, kind, order, element=el)
    for word, kind in (("Branch", "branch_open"), ("Ring", "ring_closure")):
        for size in (1, 2):
            for prefix, order in BOND_PREFIXES.items():
                text = f"[{prefix}{word}{size}]"
                vocab[text] = SelfiesToken(text, kind, order, size=size)
    return vocab


VOCAB = _build_vocab()
VOCAB_TEXTS = tuple(VOCAB)
_TOKEN_ID = {t: i for i, t in enumerate(VOCAB_TEXTS)}


def drug_vocab_size() -> int:
    return len(VOCAB_TEXTS)


def token_id(token: SelfiesToken | str) -> int:
    text = token if isinstance(token, str) else token.text
    try:
        return _TOKEN_ID[text]
    except KeyError:
        raise UnknownToken(text) from None


def tokenize(selfies: str) -> list[SelfiesToken]:
    tokens = []
    pos = 0
    n = len(selfies)
    while pos < n:
        ch = selfies[pos]
        if ch != "[":
            if ch == "]":
                raise UnbalancedBracket(pos)
            raise UnknownToken(ch, pos)
        end = selfies.find("]", pos + 1)
        nested = selfies.find("[", pos + 1)
        if end < 0 or (0 <= nested < end):
            raise UnbalancedBracket(pos)
        text = selfies[pos:end + 1]
        try:
            tokens.append(VOCAB[text])
        except KeyError:
            raise UnknownToken(text, pos) from None
        pos = end + 1
    return tokens


def encode_drug(selfies: str) -> list[int]:
    """SELFIES text to drug-vocabulary ids (the DrugTokenSeq)."""
    return [_TOKEN_ID[t.text] for t in tokenize(selfies)]


@dataclass(frozen=True)
class Diagnostic:
    token_index: int
    message: str


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[tuple[str, int], ...] = ()
    bonds: tuple[tuple[int, int, int], ...] = ()
    diagnostics: tuple[Diagnostic, ...] = field(default=(), compare=False)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def bond_orders(self) -> list[int]:
        used = [0] * len(self.atoms)
        for i, j, order in self.bonds:
            used[i] += order
            used[j] += order
        return used


def validate(graph: MolGraph) -> bool:
    n = len(graph.atoms)
    for element, max_valence in graph.atoms:
        if not isinstance(max_valence, int) or max_valence < 1:
            return False
    seen = set()
    used = [0] * n
    for i, j, order in graph.bonds:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            return False
        if order not in (1, 2, 3):
            return False
        key = (min(i, j), max(i, j))
        if key in seen:
            return False
        seen.add(key)
        used[i] += order
        used[j] += order
    return all(u <= atom[1] for u, atom in zip(used, graph.atoms))


class _Frame:
    __slots__ = ("max_derive", "n_derived", "state", "prev", "running")

    def __init__(self, max_derive, state, prev):
        self.max_derive = max_derive
        self.n_derived = 0
        self.state = state
        self.prev = prev
        self.running = True


def decode(tokens, ring_duplicates: str = "drop") -> MolGraph:
    """Derive a molecular graph from a token list.

    ``ring_duplicates`` chooses what happens when a ring closure lands on an
    already-bonded atom pair: ``"drop"`` discards it, ``"merge"`` raises the
    existing bond order (capped at 3 and by free valence), which is what the
    reference SELFIES decoder does.
    """
    if ring_duplicates not in RING_DUPLICATE_POLICIES:
        raise ValueError(f"ring_duplicates must be one of {RING_DUPLICATE_POLICIES}")
    tokens = [VOCAB[t] if isinstance(t, str) else t for t in tokens]
    elements: list[str] = []
    bonds: dict[tuple[int, int], int] = {}
    used: list[int] = []
    rings: list[tuple[int, int, int, int]] = []
    diags: list[Diagnostic] = []

    pos = 0
    n_tok = len(tokens)

    def take():
        nonlocal pos
        if pos >= n_tok:
            return None
        tok = tokens[pos]
        pos += 1
        return tok

    def read_index(n_symbols):
        value = 0
        for _ in range(n_symbols):
            tok = take()
            code = 0 if tok is None else _INDEX_CODE.get(tok.text, 0)
            value = value * len(INDEX_ALPHABET) + code
        return value

    stack = [_Frame(math.inf, 0, None)]
    while stack:
        fr = stack[-1]
        if fr.running and fr.state is not None and fr.n_derived < fr.max_derive:
            here = pos
            tok = take()
            if tok is None:
                fr.running = False
                continue
            fr.n_derived += 1
            state = fr.state

            if tok.kind == "branch_open":
                if state <= 1:
                    diags.append(Diagnostic(here, f"{tok.text} skipped: no spare valence"))
                    continue
                binit = min(state - 1, tok.order)
                if binit < tok.order:
                    diags.append(Diagnostic(here, f"{tok.text} order clamped {tok.order}->{binit}"))
                fr.state = state - binit
                q = read_index(tok.size)
                fr.n_derived += tok.size
                stack.append(_Frame(q + 1, binit, fr.prev))
                continue

            if tok.kind == "ring_closure":
                if state == 0:
                    diags.append(Diagnostic(here, f"{tok.text} skipped: no preceding atom"))
                    continue
                order = min(tok.order, state)
                if order < tok.order:
                    diags.append(Diagnostic(here, f"{tok.text} order clamped {tok.order}->{order}"))
                left = state - order
                q = read_index(tok.size)
                fr.n_derived += tok.size
                lidx = max(0, fr.prev - (q + 1))
                rings.append((lidx, fr.prev, order, here))
                fr.state = left if left else None
                continue

            cap = VALENCE[tok.element]
            order = 0 if state == 0 else min(tok.order, state, cap)
            if 0 < order < tok.order:
                diags.append(Diagnostic(here, f"{tok.text} bond clamped {tok.order}->{order}"))
            new = len(elements)
            elements.append(tok.element)
            used.append(order)
            if order:
                used[fr.prev] += order
                bonds[(fr.prev, new)] = order
            fr.prev = new
            left = cap - order
            fr.state = left if left else None
            continue

        # frame finished: swallow the rest of its declared span
        start = pos
        while fr.n_derived < fr.max_derive and take() is not None:
            fr.n_derived += 1
        if pos > start:
            scope = "molecule" if len(stack) == 1 else "branch"
            diags.append(Diagnostic(start, f"valence exhausted; {pos - start} token(s) of the {scope} ignored"))
        stack.pop()
        if stack:
            stack[-1].n_derived += fr.n_derived

    for lidx, ridx, order, where in rings:
        if lidx == ridx:
            diags.append(Diagnostic(where, "ring closure onto the same atom skipped"))
            continue
        lfree = VALENCE[elements[lidx]] - used[lidx]
        rfree = VALENCE[elements[ridx]] - used[ridx]
        if lfree <= 0 or rfree <= 0:
            diags.append(Diagnostic(where, "ring closure skipped: no free valence"))
            continue
        order = min(order, lfree, rfree)
        key = (lidx, ridx)
        if key in bonds:
            if ring_duplicates == "drop":
                diags.append(Diagnostic(where, f"ring closure duplicates bond {key}; dropped"))
                continue
            new_order = min(order + bonds[key], 3)
            delta = new_order - bonds[key]
            diags.append(Diagnostic(where, f"ring closure merged into bond {key}"))
            bonds[key] = new_order
            used[lidx] += delta
            used[ridx] += delta
            continue
        bonds[key] = order
        used[lidx] += order
        used[ridx] += order

    return MolGraph(
        atoms=tuple((el, VALENCE[el]) for el in elements),
        bonds=tuple((i, j, o) for (i, j), o in bonds.items()),
        diagnostics=tuple(diags),
    )


def decode_string(selfies: str, ring_duplicates: str = "drop") -> MolGraph:
    return decode(tokenize(selfies), ring_duplicates=ring_duplicates)
