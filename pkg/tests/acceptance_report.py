"""Collects one summary line per acceptance criterion for the terminal report."""
LINES = []


def record(number, name, ok, detail=""):
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    LINES.append(line)
    print(line)
    return ok
