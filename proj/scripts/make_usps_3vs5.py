#!/usr/bin/env python3
"""Builds the binary digit-3-versus-digit-5 subset of the usps data.

The libsvm distribution of usps labels the ten digits 1..10, shifted up by
one from the digit values, so digit 3 carries label 4 and digit 5 carries
label 6. Train and test portions are concatenated before filtering; the
experiment configs re-split the result at run time.

Usage: make_usps_3vs5.py <usps> <usps.t> <output>
"""

import sys


def main() -> int:
    if len(sys.argv) != 4:
        print(__doc__, file=sys.stderr)
        return 2
    kept = 0
    counts = {}
    with open(sys.argv[3], "w") as out:
        for path in (sys.argv[1], sys.argv[2]):
            with open(path) as src:
                for line in src:
                    line = line.strip()
                    if not line:
                        continue
                    label = line.split(None, 1)[0]
                    if label in ("4", "6"):
                        out.write(line + "\n")
                        kept += 1
                        counts[label] = counts.get(label, 0) + 1
    print(f"kept {kept} rows (digit 3: {counts.get('4', 0)}, digit 5: {counts.get('6', 0)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
