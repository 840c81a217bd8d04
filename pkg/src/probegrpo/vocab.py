"""Token vocabulary shared by the policy and the synthetic tasks.

Every token is a single printable character so encoded problems stay
greppable in dumps: ``^`` begins a sequence, ``$`` ends it, ``@`` separates
reasoning from the final answer, and the rest are digits and operators.
"""

from __future__ import annotations

from dataclasses import dataclass

BOS_CHAR = "^"
EOS_CHAR = "$"
ANSWER_DELIM_CHAR = "@"

_STANDARD_TOKENS = tuple("^$@0123456789+=#?%<>")


@dataclass(frozen=True)
class Vocab:
    """Immutable token table with the three special token ids."""

    tokens: tuple[str, ...]
    bos_id: int
    eos_id: int
    answer_delim_id: int

    def __post_init__(self) -> None:
        if len(self.tokens) < 4:
            raise ValueError("vocab needs at least 4 tokens (bos, eos, delim, one symbol)")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocab tokens must be distinct")
        specials = (self.bos_id, self.eos_id, self.answer_delim_id)
        if len(set(specials)) != 3:
            raise ValueError("bos, eos and answer_delim ids must be distinct")
        for tid in specials:
            if not 0 <= tid < len(self.tokens):
                raise ValueError(f"special token id {tid} outside vocab of size {len(self.tokens)}")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise ValueError(f"token {token!r} not in vocab") from None

    def encode(self, text: str) -> list[int]:
        """Encode a string of single-character tokens to ids."""
        return [self.id_of(ch) for ch in text]

    def decode(self, ids) -> str:
        out = []
        for tid in ids:
            tid = int(tid)
            if not 0 <= tid < len(self.tokens):
                raise ValueError(f"token id {tid} outside vocab of size {len(self.tokens)}")
            out.append(self.tokens[tid])
        return "".join(out)

    def digit_id(self, digit: int) -> int:
        if not 0 <= digit <= 9:
            raise ValueError(f"not a digit: {digit}")
        return self.id_of(str(digit))

    def encode_number(self, value: int) -> list[int]:
        """Digit-by-digit encoding of a non-negative integer."""
        if value < 0:
            raise ValueError("only non-negative numbers are encoded")
        return [self.id_of(ch) for ch in str(value)]


def standard_vocab() -> Vocab:
    """The 20-token vocabulary used by all built-in tasks."""
    return Vocab(
        tokens=_STANDARD_TOKENS,
        bos_id=_STANDARD_TOKENS.index(BOS_CHAR),
        eos_id=_STANDARD_TOKENS.index(EOS_CHAR),
        answer_delim_id=_STANDARD_TOKENS.index(ANSWER_DELIM_CHAR),
    )
