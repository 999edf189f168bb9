"""Structure-aware protein vocabulary.

Every residue position carries two characters: an amino-acid letter and a
local-geometry letter. The pair maps to one of 21 x 21 = 441 token ids::

    id = residue_index * 21 + geom_index

Residues are the 20 standard one-letter codes in alphabetical order followed
by the placeholder ``X``; geometry letters are ``a``..``t`` followed by the
placeholder ``#``. This ordering is part of the embedding-file contract.
"""

from __future__ import annotations

from .errors import EmptySequence, OddLength, UnknownSymbol

RESIDUES = "ACDEFGHIKLMNPQRSTVWY" + "X"
GEOMETRY = "abcdefghijklmnopqrst" + "#"
UNKNOWN_RESIDUE = "X"
UNKNOWN_GEOMETRY = "#"

_RES_INDEX = {c: i for i, c in enumerate(RESIDUES)}
_GEOM_INDEX = {c: i for i, c in enumerate(GEOMETRY)}


def vocab_size() -> int:
    return len(RESIDUES) * len(GEOMETRY)


def encode_pair(residue: str, geom: str) -> int:
    try:
        r = _RES_INDEX[residue]
    except KeyError:
        raise UnknownSymbol(residue, alphabet="residue") from None
    try:
        g = _GEOM_INDEX[geom]
    except KeyError:
        raise UnknownSymbol(geom, alphabet="geometry") from None
    return r * len(GEOMETRY) + g


def decode_token(token: int) -> tuple[str, str]:
    if not 0 <= token < vocab_size():
        raise ValueError(f"token id {token} outside [0, {vocab_size()})")
    r, g = divmod(int(token), len(GEOMETRY))
    return RESIDUES[r], GEOMETRY[g]


def encode_sequence(annotated: str) -> list[int]:
    """Tokenize interleaved residue/geometry text, e.g. ``"AaCcKd"``.

    Raises OddLength for an odd character count and UnknownSymbol (with the
    character offset) for characters outside either alphabet.
    """
    if not annotated:
        raise EmptySequence("annotated protein sequence is empty")
    if len(annotated) % 2:
        raise OddLength(f"annotated sequence has odd length {len(annotated)}")
    tokens = []
    for pos in range(0, len(annotated), 2):
        res, geom = annotated[pos], annotated[pos + 1]
        if res not in _RES_INDEX:
            raise UnknownSymbol(res, pos, "residue")
        if geom not in _GEOM_INDEX:
            raise UnknownSymbol(geom, pos + 1, "geometry")
        tokens.append(_RES_INDEX[res] * len(GEOMETRY) + _GEOM_INDEX[geom])
    return tokens


def decode_sequence(tokens) -> str:
    return "".join(r + g for r, g in map(decode_token, tokens))


def token_label(token: int) -> str:
    r, g = decode_token(token)
    return r + g
