"""Result tables: CSV rows, markdown level x degree tables and published reference counts."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterator, Sequence

from .benchmark import ResultRow

CSV_HEADER = (
    "domain",
    "level",
    "degree",
    "variant",
    "precond",
    "iterations",
    "kappa",
    "seconds",
    "status",
)

REFERENCE_LEVELS = (2, 3, 4, 5)
REFERENCE_DEGREES = (2, 3, 4, 5, 6)

# Published PCG iteration counts, rows level 2..5, columns degree 2..6
REFERENCE_ITERATIONS: dict[tuple[str, str, str], list[list[int]]] = {
    ("quarter-annulus", "c", "sd1"): [
        [43, 42, 43, 43, 38],
        [47, 48, 48, 48, 44],
        [53, 51, 55, 53, 52],
        [56, 60, 61, 58, 58],
    ],
    ("quarter-annulus", "c", "sd2"): [
        [28, 27, 28, 27, 25],
        [29, 31, 30, 30, 29],
        [34, 34, 35, 33, 32],
        [35, 37, 38, 36, 35],
    ],
    ("quarter-annulus", "ce", "sd1"): [
        [16, 16, 16, 15, 15],
        [17, 17, 17, 17, 16],
        [18, 18, 18, 18, 18],
        [20, 20, 20, 19, 19],
    ],
    ("quarter-annulus", "ce", "sd2"): [
        [11, 12, 11, 11, 11],
        [13, 13, 13, 12, 12],
        [14, 14, 14, 13, 13],
        [15, 15, 15, 15, 14],
    ],
    ("quarter-annulus", "cn", "sd1"): [
        [22, 23, 22, 22, 22],
        [25, 25, 25, 24, 24],
        [26, 27, 27, 26, 25],
        [29, 29, 28, 28, 27],
    ],
    ("quarter-annulus", "cn", "sd2"): [
        [17, 17, 17, 17, 16],
        [18, 19, 19, 18, 18],
        [20, 20, 20, 20, 19],
        [22, 22, 22, 21, 21],
    ],
    ("yeti", "c", "sd1"): [
        [143, 150, 133, 132, 126],
        [172, 175, 146, 183, 176],
        [191, 201, 203, 151, 174],
        [223, 245, 238, 240, 234],
    ],
    ("yeti", "c", "sd2"): [
        [76, 78, 67, 70, 63],
        [85, 86, 73, 85, 78],
        [94, 97, 95, 74, 72],
        [101, 112, 106, 109, 103],
    ],
    ("yeti", "ce", "sd1"): [
        [21, 22, 22, 23, 23],
        [25, 27, 24, 28, 26],
        [29, 30, 30, 30, 31],
        [31, 34, 33, 33, 35],
    ],
    ("yeti", "ce", "sd2"): [
        [14, 14, 14, 14, 13],
        [15, 16, 15, 16, 15],
        [17, 18, 16, 16, 17],
        [19, 19, 19, 18, 18],
    ],
    ("yeti", "cn", "sd1"): [
        [20, 21, 22, 22, 23],
        [23, 25, 26, 26, 26],
        [27, 28, 28, 28, 29],
        [30, 31, 31, 31, 32],
    ],
    ("yeti", "cn", "sd2"): [
        [16, 17, 16, 16, 16],
        [18, 18, 18, 18, 17],
        [20, 20, 20, 19, 19],
        [22, 22, 22, 21, 20],
    ],
    ("unit-square", "c", "sd1"): [
        [28, 29, 30, 28, 27],
        [32, 32, 33, 32, 31],
        [37, 37, 37, 36, 35],
        [40, 43, 42, 42, 39],
    ],
    ("unit-square", "c", "sd2"): [
        [21, 21, 22, 21, 20],
        [23, 24, 24, 24, 23],
        [27, 26, 27, 26, 25],
        [27, 30, 30, 29, 28],
    ],
    ("unit-square", "ce", "sd1"): [
        [14, 14, 14, 14, 14],
        [15, 16, 16, 16, 15],
        [17, 17, 17, 17, 17],
        [18, 18, 18, 18, 18],
    ],
    ("unit-square", "ce", "sd2"): [
        [18, 18, 18, 19, 18],
        [20, 21, 21, 21, 20],
        [22, 23, 22, 22, 22],
        [24, 25, 25, 24, 23],
    ],
    ("unit-square", "cn", "sd1"): [
        [18, 18, 18, 19, 18],
        [20, 21, 21, 21, 20],
        [22, 23, 22, 22, 22],
        [24, 25, 25, 24, 23],
    ],
    ("unit-square", "cn", "sd2"): [
        [14, 15, 15, 15, 14],
        [16, 16, 16, 16, 16],
        [18, 18, 18, 18, 17],
        [19, 20, 20, 20, 19],
    ],
}

# Published tables that repeat another table verbatim (unit square ce/sd2 equals cn/sd1,
# while its degree-4 kappa of about 3.26 matches an iteration count near 10)
SUSPECT_REFERENCES = frozenset({("unit-square", "ce", "sd2")})

# Published condition numbers at degree 4, levels 2..5
REFERENCE_KAPPA: dict[tuple[str, str, str], tuple[float, ...]] = {
    ("quarter-annulus", "c", "sd1"): (114.87, 140.757, 171.456, 204.894),
    ("quarter-annulus", "ce", "sd1"): (6.79309, 7.67078, 8.8891, 10.3149),
    ("quarter-annulus", "cn", "sd1"): (14.8929, 18.082, 21.509, 25.2173),
    ("quarter-annulus", "c", "sd2"): (41.207, 49.7688, 59.1471, 69.4346),
    ("quarter-annulus", "ce", "sd2"): (3.90832, 4.61709, 5.5316, 6.54666),
    ("quarter-annulus", "cn", "sd2"): (8.53874, 10.3001, 11.6639, 14.2968),
    ("unit-square", "c", "sd1"): (27.6317, 35.6262, 44.1542, 54.0877),
    ("unit-square", "ce", "sd1"): (5.55832, 6.7911, 8.11693, 9.55116),
    ("unit-square", "cn", "sd1"): (9.28402, 11.6908, 14.2842, 17.1175),
    ("unit-square", "c", "sd2"): (14.3739, 17.8053, 21.4793, 25.3442),
    ("unit-square", "ce", "sd2"): (3.25594, 3.91571, 4.58545, 5.32687),
    ("unit-square", "cn", "sd2"): (6.03108, 7.39175, 8.92729, 10.6089),
}


def reference_iterations(
    domain: str, variant: str, precond: str, level: int, degree: int
) -> int | None:
    table = REFERENCE_ITERATIONS.get((domain, variant, precond))
    if table is None or level not in REFERENCE_LEVELS or degree not in REFERENCE_DEGREES:
        return None
    return table[REFERENCE_LEVELS.index(level)][REFERENCE_DEGREES.index(degree)]


def reference_kappa(domain: str, variant: str, precond: str, level: int) -> float | None:
    """Published condition number at degree 4."""
    values = REFERENCE_KAPPA.get((domain, variant, precond))
    if values is None or level not in REFERENCE_LEVELS:
        return None
    return values[REFERENCE_LEVELS.index(level)]


def _cell(value: float | int | None, fmt: str) -> str:
    return "" if value is None else format(value, fmt)


def csv_text(rows: Sequence[ResultRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(
            [
                row["domain"],
                row["level"],
                row["degree"],
                row["variant"],
                row["precond"],
                _cell(row["iterations"], "d"),
                _cell(row["kappa"], ".6g"),
                f"{row['seconds']:.3f}",
                row["status"],
            ]
        )
    return buffer.getvalue()


def markdown_text(rows: Sequence[ResultRow], value: str = "iterations") -> str:
    """One level x degree table per (domain, variant, preconditioner), in sweep order."""
    groups: dict[tuple[str, str, str], list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row["domain"], row["variant"], row["precond"]), []).append(row)

    def tables() -> Iterator[str]:
        for (domain, variant, precond), group in groups.items():
            levels = sorted({r["level"] for r in group})
            degrees = sorted({r["degree"] for r in group})
            cells = {(r["level"], r["degree"]): r for r in group}
            lines = [
                f"### {domain}, {variant}, {precond} ({value})",
                "",
                "| level \\ degree | " + " | ".join(str(p) for p in degrees) + " |",
                "|---|" + "---|" * len(degrees),
            ]
            for level in levels:

                def cell(degree: int) -> str:
                    found = cells.get((level, degree))
                    if found is None or found["status"].startswith("error"):
                        return ""
                    if value == "kappa":
                        return _cell(found["kappa"], ".6g")
                    return _cell(found["iterations"], "d")

                lines.append(f"| {level} | " + " | ".join(cell(p) for p in degrees) + " |")
            yield "\n".join(lines) + "\n"

    return "\n".join(tables())


def emit_report(
    rows: Sequence[ResultRow],
    fmt: str = "csv",
    out: Path | None = None,
    value: str = "iterations",
) -> str:
    """Render rows as CSV or markdown; write them to `out` when given."""
    if fmt == "csv":
        text = csv_text(rows)
    elif fmt == "markdown":
        text = markdown_text(rows, value)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if out is not None:
        with open(out, "w") as f:
            f.write(text)
    return text


def comparison_lines(rows: Sequence[ResultRow]) -> list[str]:
    """Measured minus published iteration counts (and kappa ratios at degree 4)."""

    def iterator() -> Iterator[str]:
        for row in rows:
            if row["iterations"] is None or row["status"].startswith("error"):
                continue
            ref = reference_iterations(
                row["domain"], row["variant"], row["precond"], row["level"], row["degree"]
            )
            if ref is None:
                continue
            line = (
                f"{row['domain']} {row['variant']}/{row['precond']} "
                f"level={row['level']} degree={row['degree']}: "
                f"{row['iterations']} vs {ref} ({row['iterations'] - ref:+d})"
            )
            if (row["domain"], row["variant"], row["precond"]) in SUSPECT_REFERENCES:
                line += " [suspect reference]"
            kappa = reference_kappa(row["domain"], row["variant"], row["precond"], row["level"])
            if row["degree"] == 4 and kappa is not None and row["kappa"] is not None:
                line += f", kappa {row['kappa']:.4g} vs {kappa:.4g}"
            yield line

    return list(iterator())
