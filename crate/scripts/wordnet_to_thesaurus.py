#!/usr/bin/env python3
"""Offline fixture generator: WordNet export -> promptsens thesaurus JSON.

Reads a lexical database export and writes the flat JSON object the
harness loads at runtime ({lemma: [synonyms, ...]}). This is a
fixture-generation helper, not a runtime dependency; the shipped
fixtures/thesaurus.json was produced by hand-curating output of this
kind.

Input format (one synset per line, tab-separated lemmas):

    big	large	sizable
    fast	quick	rapid

Multi-word entries and self-synonyms are dropped, mirroring the loader's
invariants. Usage:

    python3 scripts/wordnet_to_thesaurus.py synsets.tsv > thesaurus.json
"""
import json
import sys
from collections import defaultdict


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    synonyms = defaultdict(set)
    with open(sys.argv[1], encoding="utf-8") as handle:
        for line in handle:
            lemmas = [w.strip().lower() for w in line.split("\t") if w.strip()]
            lemmas = [w for w in lemmas if w.isalnum() or w.replace("'", "").isalnum()]
            for lemma in lemmas:
                for other in lemmas:
                    if other != lemma and " " not in other:
                        synonyms[lemma].add(other)
    out = {lemma: sorted(words) for lemma, words in sorted(synonyms.items()) if words}
    json.dump(out, sys.stdout, indent=2, ensure_ascii=False)
    print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
