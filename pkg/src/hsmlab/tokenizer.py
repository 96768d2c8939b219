"""Byte-level BPE tokenizer: greedy pair-merge training plus fast encoding.

Text is handled as raw UTF-8 bytes with no pre-tokenization, so any input
round-trips exactly. Training merges the highest-frequency adjacent token
pair (ties broken by the lexicographically smallest byte-string pair) until
the requested vocabulary size is reached or no adjacent pairs remain.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict

__all__ = ["Vocab", "train_bpe"]

_N_BYTES = 256
VOCAB_FORMAT_VERSION = 1


class Vocab:
    """Trained merge table plus exact token<->id maps.

    Token ids are: 0..255 the raw bytes, then one id per merge in training
    order, then any declared special tokens.
    """

    def __init__(self, merges: list[tuple[int, int]], specials: tuple[str, ...] = ()):
        tokens = [bytes([i]) for i in range(_N_BYTES)]
        for left, right in merges:
            if left >= len(tokens) or right >= len(tokens):
                raise ValueError(f"merge ({left},{right}) references unknown token ids")
            tokens.append(tokens[left] + tokens[right])
        for s in specials:
            tokens.append(s.encode("utf-8"))
        token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(token_to_id) != len(tokens):
            raise ValueError("duplicate token byte strings; token_to_id would not invert")
        self._tokens = tokens
        self._token_to_id = token_to_id
        self.merges = list(merges)
        self.specials = tuple(specials)
        # merge i produces token id 256+i
        self._ranks = {pair: i for i, pair in enumerate(merges)}

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __len__(self) -> int:
        return self.size

    @property
    def token_to_id(self) -> dict[bytes, int]:
        return dict(self._token_to_id)

    def id_to_token(self, i: int) -> bytes:
        if not 0 <= i < len(self._tokens):
            raise IndexError(f"token id {i} out of range for vocab of size {self.size}")
        return self._tokens[i]

    def special_id(self, name: str) -> int:
        tok = name.encode("utf-8")
        if name not in self.specials:
            raise KeyError(f"special token {name!r} not declared")
        return self._token_to_id[tok]

    # ----- encode / decode ---------------------------------------------------

    def encode(self, text: str) -> list[int]:
        """Apply merges in training order; decode(encode(t)) == t."""
        ids = list(text.encode("utf-8"))
        n = len(ids)
        if n < 2 or not self._ranks:
            return ids
        ranks = self._ranks
        nxt = list(range(1, n)) + [-1]
        prv = [-1] + list(range(n - 1))
        alive = [True] * n
        # merge the earliest-trained applicable pair first; ties left-to-right
        heap: list[tuple[int, int]] = []
        for i in range(n - 1):
            r = ranks.get((ids[i], ids[i + 1]))
            if r is not None:
                heap.append((r, i))
        heapq.heapify(heap)
        while heap:
            r, i = heapq.heappop(heap)
            if not alive[i]:
                continue
            j = nxt[i]
            if j == -1 or ranks.get((ids[i], ids[j])) != r:
                continue  # stale entry
            ids[i] = _N_BYTES + r
            alive[j] = False
            nxt[i] = nxt[j]
            if nxt[j] != -1:
                prv[nxt[j]] = i
            p = prv[i]
            if p != -1:
                rp = ranks.get((ids[p], ids[i]))
                if rp is not None:
                    heapq.heappush(heap, (rp, p))
            q = nxt[i]
            if q != -1:
                rq = ranks.get((ids[i], ids[q]))
                if rq is not None:
                    heapq.heappush(heap, (rq, i))
        out = []
        i = 0
        while i != -1:
            if alive[i]:
                out.append(ids[i])
            i = nxt[i]
        return out

    def decode(self, ids) -> str:
        """Concatenate token bytes and decode as UTF-8.

        Ids produced by ``encode`` reconstruct the input exactly; arbitrary id
        sequences (e.g. a truncated generation) may hit a split codepoint, in
        which case the replacement character is emitted at the cut.
        """
        parts = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self._tokens):
                raise IndexError(f"token id {i} out of range for vocab of size {self.size}")
            parts.append(self._tokens[i])
        return b"".join(parts).decode("utf-8", errors="replace")

    # ----- serialization ------------------------------------------------------

    def to_json(self) -> str:
        """Bit-exact serialization; token bytes are stored as latin-1 strings."""
        merges = [
            [self._tokens[l].decode("latin-1"), self._tokens[r].decode("latin-1")]
            for l, r in self.merges
        ]
        doc = {
            "version": VOCAB_FORMAT_VERSION,
            "vocab_size": self.size,
            "merges": merges,
            "specials": list(self.specials),
        }
        return json.dumps(doc, ensure_ascii=True, sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        doc = json.loads(text)
        version = doc.get("version")
        if version != VOCAB_FORMAT_VERSION:
            raise ValueError(f"unsupported vocab file version {version!r}")
        tokens = [bytes([i]) for i in range(_N_BYTES)]
        index = {tok: i for i, tok in enumerate(tokens)}
        merges = []
        for left_s, right_s in doc["merges"]:
            lb = left_s.encode("latin-1")
            rb = right_s.encode("latin-1")
            if lb not in index or rb not in index:
                raise ValueError(f"merge ({left_s!r},{right_s!r}) references unknown token")
            merges.append((index[lb], index[rb]))
            tokens.append(lb + rb)
            index[tokens[-1]] = len(tokens) - 1
        vocab = cls(merges, tuple(doc.get("specials", ())))
        if vocab.size != doc["vocab_size"]:
            raise ValueError(
                f"vocab file inconsistent: declares size {doc['vocab_size']}, has {vocab.size}"
            )
        return vocab

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def train_bpe(corpus, vocab_size: int, specials: tuple[str, ...] = ()) -> Vocab:
    """Train a byte-level BPE vocabulary of (at most) ``vocab_size`` entries.

    ``corpus`` is an iterable of documents (strings); merges never cross
    document boundaries. Merging is greedy by pair frequency with a
    deterministic tie-break (lexicographically smallest byte-string pair).
    If the corpus runs out of adjacent pairs before ``vocab_size`` is
    reached, training stops early and the vocabulary reports its actual size.
    """
    texts = [t for t in corpus if t]
    if not texts:
        raise ValueError("train_bpe: corpus is empty")
    n_target = vocab_size - _N_BYTES - len(specials)
    if n_target < 0:
        raise ValueError(
            f"vocab_size {vocab_size} below the byte alphabet plus {len(specials)} specials"
        )

    seqs = [list(t.encode("utf-8")) for t in texts]
    tokens: list[bytes] = [bytes([i]) for i in range(_N_BYTES)]
    taken = set(tokens)
    counts: Counter = Counter()
    where: defaultdict = defaultdict(set)
    for si, s in enumerate(seqs):
        for pair in zip(s, s[1:]):
            counts[pair] += 1
            where[pair].add(si)

    # lazy max-heap keyed by (count desc, byte-string pair asc)
    heap = [(-c, tokens[p[0]], tokens[p[1]], p) for p, c in counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[int, int]] = []
    blacklist: set[tuple[int, int]] = set()

    def push(pair):
        c = counts[pair]
        if c > 0 and pair not in blacklist:
            heapq.heappush(heap, (-c, tokens[pair[0]], tokens[pair[1]], pair))

    while len(merges) < n_target and heap:
        negc, _, _, pair = heapq.heappop(heap)
        c = counts.get(pair, 0)
        if c <= 0 or pair in blacklist:
            continue
        if -negc != c:
            push(pair)  # stale count; requeue at the current one
            continue
        new_bytes = tokens[pair[0]] + tokens[pair[1]]
        if new_bytes in taken:
            # a merge along another split already produced these bytes; merging
            # again would break the token<->id bijection, so retire the pair
            blacklist.add(pair)
            continue
        new_id = len(tokens)
        tokens.append(new_bytes)
        taken.add(new_bytes)
        merges.append(pair)
        touched: set[tuple[int, int]] = set()
        for si in sorted(where.pop(pair, ())):
            seqs[si] = _merge_in_seq(seqs[si], pair, new_id, counts, where, si, touched)
        counts.pop(pair, None)
        touched.discard(pair)
        for p in touched:
            push(p)

    return Vocab(merges, specials)


def _find_sites(s, a, b):
    """Left-to-right non-overlapping occurrences of the (a, b) pair."""
    sites = []
    i = 0
    stop = len(s) - 1
    while True:
        try:
            j = s.index(a, i, stop)  # C-speed scan to the next candidate
        except ValueError:
            return sites
        if s[j + 1] == b:
            sites.append(j)
            i = j + 2
        else:
            i = j + 1


def _merge_in_seq(s, pair, new_id, counts, where, si, touched):
    """Replace non-overlapping occurrences of ``pair`` in one sequence,
    updating global pair counts incrementally. Returns the new sequence."""
    a, b = pair
    n = len(s)
    sites = _find_sites(s, a, b)
    if not sites:
        return s
    remove_pos = set()
    for i in sites:
        remove_pos.add(i)
        if i - 1 >= 0:
            remove_pos.add(i - 1)
        if i + 2 < n:
            remove_pos.add(i + 1)
    for p in remove_pos:
        old = (s[p], s[p + 1])
        counts[old] -= 1
        touched.add(old)
    out = []
    new_pos = []
    prev = 0
    for i in sites:
        out.extend(s[prev:i])
        new_pos.append(len(out))
        out.append(new_id)
        prev = i + 2
    out.extend(s[prev:])
    add_pos = set()
    last = len(out) - 1
    for k in new_pos:
        if k - 1 >= 0:
            add_pos.add(k - 1)
        if k < last:
            add_pos.add(k)
    for q in add_pos:
        newp = (out[q], out[q + 1])
        counts[newp] += 1
        where[newp].add(si)
        touched.add(newp)
    return out
