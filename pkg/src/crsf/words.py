"""Fundamental-group words.

Two groups are supported: Z^2 (the closed torus) as integer pairs and a free
group of finite rank (bordered surfaces) as freely reduced tuples of nonzero
integers, where ``i`` is the i-th generator and ``-i`` its inverse.  A planar
domain is the free group of rank 0, whose only word is ``()``.
"""

from __future__ import annotations

import string


class GroupMismatch(ValueError):
    pass


class Z2:
    kind = "torus"

    def __init__(self):
        self.identity = (0, 0)

    def __eq__(self, other):
        return isinstance(other, Z2)

    def __hash__(self):
        return hash("Z2")

    def __repr__(self):
        return "Z2()"

    def check(self, w):
        if not (isinstance(w, tuple) and len(w) == 2 and all(isinstance(c, int) for c in w)):
            raise GroupMismatch(f"not a Z2 word: {w!r}")
        return w

    def compose(self, a, b):
        return (a[0] + b[0], a[1] + b[1])

    def inverse(self, a):
        return (-a[0], -a[1])

    def is_identity(self, a):
        return a[0] == 0 and a[1] == 0

    def generators(self):
        return [(1, 0), (0, 1)]

    def format(self, a):
        return f"{a[0]},{a[1]}"

    def parse(self, text):
        try:
            x, y = text.split(",")
            return (int(x), int(y))
        except ValueError:
            raise ValueError(f"bad Z2 word {text!r}") from None


class FreeGroup:
    kind = "free"

    def __init__(self, rank):
        if rank < 0 or rank > 26:
            raise ValueError("free group rank must be in [0, 26]")
        self.rank = rank
        self.identity = ()

    def __eq__(self, other):
        return isinstance(other, FreeGroup) and other.rank == self.rank

    def __hash__(self):
        return hash(("free", self.rank))

    def __repr__(self):
        return f"FreeGroup({self.rank})"

    def check(self, w):
        if not isinstance(w, tuple):
            raise GroupMismatch(f"not a free-group word: {w!r}")
        for i, c in enumerate(w):
            if not isinstance(c, int) or c == 0 or abs(c) > self.rank:
                raise GroupMismatch(f"letter {c!r} outside rank {self.rank}")
            if i and w[i - 1] == -c:
                raise GroupMismatch(f"word {w!r} is not reduced")
        return w

    def compose(self, a, b):
        # only the junction can cancel when both inputs are reduced
        if not a:
            return b
        if not b:
            return a
        i, n = 0, min(len(a), len(b))
        while i < n and a[-1 - i] == -b[i]:
            i += 1
        return a[: len(a) - i] + b[i:]

    def inverse(self, a):
        return tuple(-c for c in reversed(a))

    def is_identity(self, a):
        return not a

    def generators(self):
        return [(i,) for i in range(1, self.rank + 1)]

    def format(self, a):
        if not a:
            return "1"
        return "".join(
            string.ascii_lowercase[c - 1] if c > 0 else string.ascii_uppercase[-c - 1] for c in a
        )

    def parse(self, text):
        if text == "1":
            return ()
        out = []
        for ch in text:
            if ch in string.ascii_lowercase:
                c = string.ascii_lowercase.index(ch) + 1
            elif ch in string.ascii_uppercase:
                c = -(string.ascii_uppercase.index(ch) + 1)
            else:
                raise ValueError(f"bad letter {ch!r} in word {text!r}")
            if c and abs(c) > self.rank:
                raise ValueError(f"letter {ch!r} outside rank {self.rank}")
            out.append(c)
        # accept unreduced input, store reduced
        red = []
        for c in out:
            if red and red[-1] == -c:
                red.pop()
            else:
                red.append(c)
        return tuple(red)


def product(group, words):
    acc = group.identity
    for w in words:
        acc = group.compose(acc, w)
    return acc


def conjugacy_key(group, w):
    """Canonical representative of the conjugacy class of ``w`` (free homotopy class of a loop)."""
    if isinstance(group, Z2):
        return w
    w = list(w)
    while len(w) > 1 and w[0] == -w[-1]:
        w = w[1:-1]
    if not w:
        return ()
    return min(tuple(w[i:] + w[:i]) for i in range(len(w)))


def unoriented_key(group, w):
    """Conjugacy class up to orientation."""
    return min(conjugacy_key(group, w), conjugacy_key(group, group.inverse(w)))
