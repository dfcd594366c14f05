"""Minimal CoNLL-U reader producing single-rooted dependency parses."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator


@dataclass(frozen=True)
class Token:
    index: int          # 1-based, as in the file
    form: str
    lemma: str
    upos: str
    head: int           # 0 = root
    deprel: str


@dataclass
class DependencyParse:
    tokens: list[Token]
    text: str = ""

    def __post_init__(self):
        roots = [t for t in self.tokens if t.head == 0]
        if len(roots) != 1:
            raise ValueError(f"parse must have exactly one root, found {len(roots)}")
        n = len(self.tokens)
        for t in self.tokens:
            if not (0 <= t.head <= n):
                raise ValueError(f"token {t.index}: head {t.head} out of range")
        # Reject cycles: walking to the root from every token must terminate.
        for t in self.tokens:
            seen = set()
            cur = t.index
            while cur != 0:
                if cur in seen:
                    raise ValueError(f"dependency cycle through token {t.index}")
                seen.add(cur)
                cur = self.tokens[cur - 1].head

    def path_to_root(self, index: int) -> list[int]:
        """Token indices from `index` up to (and including) the root token."""
        path = []
        cur = index
        while cur != 0:
            path.append(cur)
            cur = self.tokens[cur - 1].head
        return path

    def edge_path(self, a: int, b: int) -> list[str]:
        """Deprel labels along the unique tree path from token a to token b.

        Each traversed edge contributes the deprel of its child end; labels
        are ordered from a's side to b's side.
        """
        up_a = self.path_to_root(a)
        up_b = self.path_to_root(b)
        set_b = set(up_b)
        lca = next(idx for idx in up_a if idx in set_b)
        labels_up = [self.tokens[i - 1].deprel for i in up_a[:up_a.index(lca)]]
        labels_down = [self.tokens[i - 1].deprel for i in up_b[:up_b.index(lca)]]
        return labels_up + list(reversed(labels_down))


def parse_conllu_block(lines: list[str]) -> DependencyParse:
    tokens = []
    text = ""
    for line in lines:
        if line.startswith("# text"):
            _, _, value = line.partition("=")
            text = value.strip()
        if line.startswith("#") or not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise ValueError(f"CoNLL-U line has {len(cols)} columns, need >= 8: {line!r}")
        if "-" in cols[0] or "." in cols[0]:
            continue  # multiword-token and empty-node lines carry no tree edges
        tokens.append(Token(index=int(cols[0]), form=cols[1], lemma=cols[2],
                            upos=cols[3], head=int(cols[6]), deprel=cols[7]))
    return DependencyParse(tokens=tokens, text=text)


def read_conllu(path: str | Path) -> Iterator[DependencyParse]:
    """Yield one DependencyParse per sentence block."""
    block: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                block.append(line.rstrip("\n"))
            elif block:
                yield parse_conllu_block(block)
                block = []
    if block:
        yield parse_conllu_block(block)
