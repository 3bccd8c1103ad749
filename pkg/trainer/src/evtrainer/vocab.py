"""Whitespace vocabulary with atomic marker tokens.

Formatted exports join everything with single spaces, so plain ``str.split``
keeps the evidence and speaker markers intact as single tokens. The vocabulary
reserves fixed low ids for the structural specials so checkpoints can rely on
them.
"""
from __future__ import annotations

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
MARKERS = ("[p]", "[speaker1]", "[speaker2]")
SPECIALS = (PAD, BOS, EOS, UNK, *MARKERS)


def split_tokens(text: str) -> list[str]:
    return text.split()


class Vocab:
    def __init__(self, tokens: list[str]):
        if list(tokens[: len(SPECIALS)]) != list(SPECIALS):
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self._ids = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @classmethod
    def build(cls, texts) -> "Vocab":
        """Collect the sorted unique whitespace tokens of all texts."""
        seen = set()
        for text in texts:
            seen.update(split_tokens(text))
        seen -= set(SPECIALS)
        return cls([*SPECIALS, *sorted(seen)])

    def encode_tokens(self, tokens) -> list[int]:
        unk = self.unk_id
        return [self._ids.get(token, unk) for token in tokens]

    def encode(self, text: str) -> list[int]:
        return self.encode_tokens(split_tokens(text))

    def decode(self, ids, skip_special: bool = True) -> str:
        words = []
        for i in ids:
            token = self.tokens[int(i)]
            if skip_special and token in (PAD, BOS, EOS):
                continue
            words.append(token)
        return " ".join(words)

    def to_list(self) -> list[str]:
        return list(self.tokens)
