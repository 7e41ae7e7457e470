"""Collects one verdict line per acceptance criterion for the session summary."""

LINES: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
