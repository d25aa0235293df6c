"""Symbol inventory shared by the mixer, the model and the scorer."""

from __future__ import annotations

from typing import Iterable, Sequence

SC = "<sc>"
EOS = "<eos>"
SOS = "<sos>"
SPECIALS = (SC, EOS, SOS)


def token_names(vocab_size: int) -> list[str]:
    width = max(2, len(str(vocab_size - 1)))
    return [f"t{i:0{width}d}" for i in range(vocab_size)]


class Vocabulary:
    """Maps word symbols plus ``<sc>``/``<eos>`` to output ids.

    ``<sos>`` gets the id right after the output symbols; it is an input-only
    symbol and never appears in an output distribution.
    """

    def __init__(self, words: Iterable[str]):
        words = list(words)
        for w in words:
            if w in SPECIALS:
                raise ValueError(f"word list may not contain special symbol {w!r}")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        self.words = words
        self.symbols = words + [SC, EOS]
        self._index = {s: i for i, s in enumerate(self.symbols)}
        self.sc = self._index[SC]
        self.eos = self._index[EOS]
        self.sos = len(self.symbols)

    @classmethod
    def of_size(cls, vocab_size: int) -> "Vocabulary":
        return cls(token_names(vocab_size))

    def __len__(self) -> int:
        # output size V, including <sc> and <eos>
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def encode(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self._index[t] for t in tokens]
        except KeyError as exc:
            raise ValueError(f"token {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in ids]
