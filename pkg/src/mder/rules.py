"""Rule tags from a blacklist and two whitelists.

Each character gets one tag from {B-M, I-M, B-D, I-D, O, UNK, PAD}: whole
tokens matching the method whitelist get B-M/I-M..., dataset whitelist
B-D/I-D..., blacklisted words all O, and everything else (including spaces
and punctuation) UNK. These tags index the learned rule-embedding table.
"""

from __future__ import annotations

from pathlib import Path

from .errors import LexiconError

RULE_TAGS = ("B-M", "I-M", "B-D", "I-D", "O", "UNK", "PAD")
RULE_TAG_TO_INDEX = {t: i for i, t in enumerate(RULE_TAGS)}
UNK_INDEX = RULE_TAG_TO_INDEX["UNK"]
PAD_INDEX = RULE_TAG_TO_INDEX["PAD"]
NUM_RULE_TAGS = len(RULE_TAGS)

_DATA_DIR = Path(__file__).parent / "data"

# match priority for equal-length candidates
_METHOD, _DATASET, _BLACK = 0, 1, 2


class RuleLexicon:
    """Immutable method/dataset whitelists plus a blacklist.

    Matching is case-insensitive on whole tokens; lists must be pairwise
    disjoint after case-folding.
    """

    def __init__(self, methods, datasets, blacklist):
        self.methods = frozenset(self._clean(t) for t in methods)
        self.datasets = frozenset(self._clean(t) for t in datasets)
        self.blacklist = frozenset(self._clean(t) for t in blacklist)
        for a, b, names in (
            (self.methods, self.datasets, "method and dataset whitelists"),
            (self.methods, self.blacklist, "method whitelist and blacklist"),
            (self.datasets, self.blacklist, "dataset whitelist and blacklist"),
        ):
            dup = a & b
            if dup:
                raise LexiconError(f"term {sorted(dup)[0]!r} appears in {names}")
        # longest match first; method > dataset > blacklist on ties,
        # bucketed by first folded character for fast scanning
        entries = [(t, _METHOD) for t in self.methods]
        entries += [(t, _DATASET) for t in self.datasets]
        entries += [(t, _BLACK) for t in self.blacklist]
        entries.sort(key=lambda e: (-len(e[0]), e[1], e[0]))
        self._by_first: dict[str, list[tuple[str, int]]] = {}
        for term, priority in entries:
            self._by_first.setdefault(term[0], []).append((term, priority))

    @staticmethod
    def _clean(term: str) -> str:
        term = term.strip().casefold()
        if not term:
            raise LexiconError("empty lexicon term")
        if "\n" in term or "\r" in term:
            raise LexiconError(f"lexicon term contains a newline: {term!r}")
        return term

    def __repr__(self):
        return (
            f"RuleLexicon(methods={len(self.methods)}, "
            f"datasets={len(self.datasets)}, blacklist={len(self.blacklist)})"
        )


def _read_terms(path: str | Path) -> list[str]:
    terms = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                terms.append(line)
    return terms


def load_lexicon(method_path, dataset_path, blacklist_path) -> RuleLexicon:
    """Load one-term-per-line UTF-8 files ('#' lines are comments)."""
    return RuleLexicon(
        _read_terms(method_path),
        _read_terms(dataset_path),
        _read_terms(blacklist_path),
    )


def load_lexicon_dir(directory: str | Path) -> RuleLexicon:
    directory = Path(directory)
    return load_lexicon(
        directory / "methods.txt",
        directory / "datasets.txt",
        directory / "blacklist.txt",
    )


def default_lexicon() -> RuleLexicon:
    """The small curated lists shipped with the package (replaceable via
    --lexicon-dir)."""
    return load_lexicon_dir(_DATA_DIR)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum()


def _boundary_ok(text: str, start: int, end: int, term: str) -> bool:
    # only require a boundary where the term edge itself is a word character
    if _is_word_char(term[0]) and start > 0 and _is_word_char(text[start - 1]):
        return False
    if _is_word_char(term[-1]) and end < len(text) and _is_word_char(text[end]):
        return False
    return True


def rule_tags(text: str, lexicon: RuleLexicon) -> list[str]:
    """One rule tag per character via greedy longest whole-token matching."""
    tags = ["UNK"] * len(text)
    i = 0
    while i < len(text):
        matched = 0
        # fold one character at a time so offsets into `text` stay exact
        first = text[i].casefold()[:1]
        for term, priority in lexicon._by_first.get(first, ()):
            end = i + len(term)
            if text[i:end].casefold() == term and _boundary_ok(text, i, end, term):
                if priority == _BLACK:
                    for j in range(i, end):
                        tags[j] = "O"
                else:
                    kind = "M" if priority == _METHOD else "D"
                    tags[i] = f"B-{kind}"
                    for j in range(i + 1, end):
                        tags[j] = f"I-{kind}"
                matched = len(term)
                break
        i += matched if matched else 1
    return tags


def rule_tag_ids(text: str, lexicon: RuleLexicon) -> list[int]:
    return [RULE_TAG_TO_INDEX[t] for t in rule_tags(text, lexicon)]
