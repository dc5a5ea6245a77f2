#!/usr/bin/env python3
"""Regenerate crates/core/tests/data/cl100k_fixtures.jsonl with the reference
tiktoken implementation, using the vocabulary file shipped next to it.

    pip install tiktoken
    python3 scripts/gen_bpe_fixtures.py
"""
import json
import os

import tiktoken
from tiktoken.load import load_tiktoken_bpe

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "crates", "core", "tests", "data")

PAT = (
    r"""'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}++|\p{N}{1,3}+|"""
    r""" ?[^\s\p{L}\p{N}]++[\r\n]*+|\s++$|\s*[\r\n]|\s+(?!\S)|\s"""
)

SNIPPETS = [
    "",
    "x=1",
    "def f(x):\n    return x\n",
    "a = 1\n\nb = 2",
    "import sys\n\nn = int(sys.stdin.readline())\nprint(n * 2)\n",
    "for i in range(10):\n\tprint(i)\n",
    "class Solution:\n    def twoSum(self, nums, target):\n        seen = {}\n        for i, v in enumerate(nums):\n            if target - v in seen:\n                return [seen[target - v], i]\n            seen[v] = i\n",
    "print('hello, world!')",
    "s = input().strip()   \nprint(s[::-1])  \n",
    "x = [i**2 for i in range(100) if i % 3 == 0]",
    "# comment with trailing spaces    \n\n\n",
    "def gcd(a, b):\r\n    while b:\r\n        a, b = b, a % b\r\n    return a\r\n",
    "val = 1234567890 + 3.14159e-10",
    "I'm sure it's fine, we'll see; they've gone. DON'T SHOUT. You'RE ok?",
    "caf\u00e9 = '\u00fcber na\u00efve \u00e5ngstr\u00f6m'",
    "# \u65e5\u672c\u8a9e\u306e\u30b3\u30e1\u30f3\u30c8\nx = '\u4e2d\u6587'\n",
    "emoji = '\U0001F600\U0001F680 done \u2705'",
    "    \n        \n",
    "\t\t\tdeep_tab = True",
    "lambda x: (x >> 2) & 0xFF | ~x ^ (x << 1)",
    "if a<=b and c>=d or e!=f: pass",
    "while True:\n    try:\n        line = input()\n    except EOFError:\n        break\n",
    "from collections import defaultdict, Counter\nfrom itertools import permutations as perms\n",
    "matrix = [[0] * m for _ in range(n)]\nmatrix[i][j] += dp[i-1][j-1]\n",
    "print(*sorted(map(int, input().split())), sep=' ')",
    "def solve():\n    n, k = map(int, input().split())\n    a = list(map(int, input().split()))\n    return sum(sorted(a)[:k])\n\nprint(solve())\n",
    "  leading and trailing  ",
    "\n\n\nstarts_with_newlines",
    "ends_with_many_newlines\n\n\n\n",
    "mixed \t whitespace \t\t between",
    "ID_42 = 'abc123def456'",
    "x1, x2, x3 = 1, 22, 333\ny4444 = 55555",
    "\"\"\"Docstring with 'quotes' and \\\"escapes\\\".\"\"\"",
    "print(f\"{name!r:>10} {value:.2f} {{literal}}\")",
    "assert abs(result - expected) < 1e-9, 'mismatch'",
    "@decorator(arg=1)\ndef wrapped(*args, **kwargs):\n    ...\n",
    "x = a if b else c  # ternary",
    "return {'k': [1, 2, (3, 4)], \"z\": None}",
    "    \u00a0non-breaking\u00a0space",
    "a\u200bzero\u200bwidth",
    "MOD = 10**9 + 7\nans = pow(2, n, MOD)\n",
    "$$$ ### @@@ !!! ??? ...",
    "'s 're 've 'm 'll 'd 'S 'RE",
    "int main() {\n    std::cout << \"hi\" << std::endl;\n    return 0;\n}\n",
    "SELECT * FROM t WHERE id = 7;",
    "\u0391\u03b8\u03ae\u03bd\u03b1 \u041c\u043e\u0441\u043a\u0432\u0430 \u05e9\u05dc\u05d5\u05dd \u0645\u0631\u062d\u0628\u0627",
    "x = 0b1010 + 0o17 + 0x1F",
    "    # indented comment\n    pass\n",
    "a,b=map(int,input().split());print(a+b)",
    "\r\n\r\n",
]


def main():
    assert len(SNIPPETS) == 50, len(SNIPPETS)
    ranks = load_tiktoken_bpe(os.path.join(DATA, "cl100k_base.tiktoken"))
    enc = tiktoken.Encoding(
        name="cl100k_base_local",
        pat_str=PAT,
        mergeable_ranks=ranks,
        special_tokens={},
    )
    out = os.path.join(DATA, "cl100k_fixtures.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for text in SNIPPETS:
            ids = enc.encode_ordinary(text)
            assert enc.decode(ids) == text
            fh.write(json.dumps({"text": text, "ids": ids}, ensure_ascii=False) + "\n")
    print(f"wrote {len(SNIPPETS)} fixtures to {out}")


if __name__ == "__main__":
    main()
