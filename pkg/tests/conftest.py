# makes the tests directory importable (oracles.py) when pytest runs from the repo root
