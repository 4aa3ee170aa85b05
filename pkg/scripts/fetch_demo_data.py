#!/usr/bin/env python3
"""Fetch stub for public demo datasets (not vendored in this repository).

Downloads the listed numeric datasets into demo_data/, records each file's
sha256 in demo_data/CHECKSUMS.txt on first fetch, and verifies against that
file on every later fetch. Acceptance and CI use synthetic generators only;
these datasets are for interactive exploration.

Usage: python3 scripts/fetch_demo_data.py [name ...]   (default: all)
"""
import hashlib
import pathlib
import sys
import urllib.request

SOURCES = {
    "iris": "https://archive.ics.uci.edu/ml/machine-learning-databases/iris/iris.data",
    "wine_quality_red": "https://archive.ics.uci.edu/ml/machine-learning-databases/"
                        "wine-quality/winequality-red.csv",
    "yacht": "https://archive.ics.uci.edu/ml/machine-learning-databases/"
             "00243/yacht_hydrodynamics.data",
    "concrete": "https://archive.ics.uci.edu/ml/machine-learning-databases/"
                "concrete/compressive/Concrete_Data.xls",
    "seeds": "https://archive.ics.uci.edu/ml/machine-learning-databases/00236/seeds_dataset.txt",
}

OUT = pathlib.Path(__file__).resolve().parent.parent / "demo_data"


def sha256(path: pathlib.Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def load_checksums() -> dict:
    f = OUT / "CHECKSUMS.txt"
    if not f.exists():
        return {}
    return dict(line.split()[:2][::-1] for line in f.read_text().splitlines() if line.strip())


def save_checksums(sums: dict) -> None:
    lines = [f"{digest}  {name}" for name, digest in sorted(sums.items())]
    (OUT / "CHECKSUMS.txt").write_text("\n".join(lines) + "\n")


def main(names):
    names = names or sorted(SOURCES)
    OUT.mkdir(exist_ok=True)
    sums = load_checksums()
    for name in names:
        url = SOURCES.get(name)
        if url is None:
            print(f"unknown dataset {name!r}; known: {', '.join(sorted(SOURCES))}")
            return 2
        dest = OUT / pathlib.Path(url).name
        if not dest.exists():
            print(f"fetching {name} from {url}")
            urllib.request.urlretrieve(url, dest)
        digest = sha256(dest)
        if name in sums and sums[name] != digest:
            print(f"CHECKSUM MISMATCH for {name}: recorded {sums[name]}, got {digest}")
            return 1
        sums[name] = digest
        print(f"{name}: {dest.name} sha256={digest[:16]}... ok")
    save_checksums(sums)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
