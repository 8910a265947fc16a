"""Fixed, task-derived vocabularies for the token policy.

Tokens carry their leading space (``" number"`` vs ``"number"``), so
detokenization is plain concatenation and every template string round-trips
exactly. Newlines are standalone tokens.
"""

from __future__ import annotations

import hashlib
import re
from collections.abc import Iterable, Sequence

BOS = "<bos>"
EOS = "<eos>"

_TOKEN_RE = re.compile(r"\n|[ ]?[A-Za-z]+|[ ]?\d+|[ ]?[^\sA-Za-z\d]")


class UnknownTokenError(ValueError):
    pass


def tokenize_text(text: str) -> list[str]:
    """Split text into surface tokens; raises if any character is left over."""
    tokens = _TOKEN_RE.findall(text)
    if sum(len(t) for t in tokens) != len(text):
        raise UnknownTokenError(f"untokenizable text: {text!r}")
    return tokens


class Vocabulary:
    def __init__(self, tokens: Iterable[str]) -> None:
        body = sorted(set(tokens) - {BOS, EOS})
        self.tokens: list[str] = [BOS, EOS] + body
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.bos = 0
        self.eos = 1

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, text: str) -> list[int]:
        ids = []
        for tok in tokenize_text(text):
            if tok not in self.index:
                raise UnknownTokenError(f"token {tok!r} not in vocabulary")
            ids.append(self.index[tok])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[i] for i in ids if i not in (self.bos, self.eos))

    def strings(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def digest(self) -> str:
        return hashlib.sha256("\x00".join(self.tokens).encode("utf-8")).hexdigest()


def _atoms() -> list[str]:
    """Numbers and punctuation that can appear in any formula or card list."""
    out = []
    for n in range(0, 25):
        out += [str(n), f" {n}"]
    for ch in "+-*/()=[]{}'\",.:?":
        out += [ch, f" {ch}"]
    out.append("\n")
    return out


def build_vocabulary(task: str) -> Vocabulary:
    """Union of prompt-template tokens, response-template tokens and atoms for ``task``."""
    from .prompting import load_template
    from .sft import response_corpus

    corpus = [
        load_template(task, cot).replace("<<formula>>", "").replace("<<actions>>", "").replace("<<face>>", "")
        for cot in (True, False)
    ]
    corpus += response_corpus(task)
    tokens: set[str] = set(_atoms())
    for text in corpus:
        tokens.update(tokenize_text(text))
    return Vocabulary(tokens)
