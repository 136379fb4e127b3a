"""Shared CSV conventions: optional `# config=<hash>` comment, then header."""

from __future__ import annotations


def write_rows(path: str, header: str, rows, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if config_hash:
            f.write(f"# config={config_hash}\n")
        f.write(header + "\n")
        for row in rows:
            f.write(row + "\n")


def read_rows(path: str):
    """Returns (header fields, data rows as string lists); comments skipped."""
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    return header, rows
