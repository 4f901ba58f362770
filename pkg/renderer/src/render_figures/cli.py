"""Scan a directory for known experiment CSVs and render every panel.

    render_figures <dir> [--out DIR]

Emits one image per recognized CSV plus a combined contact sheet.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .panels import PanelSpec, contact_sheet, render
from .schema import SchemaMismatch

# filename -> (panel kind, companion filename)
KNOWN_FILES = {
    "heatmap.csv": ("heatmap", "heatmap_refcurve.csv"),
    "profile.csv": ("profile", None),
    "field.csv": ("field", None),
    "supercritical.csv": ("histogram", "supercritical_theory.csv"),
}


def discover(root: Path):
    """Panel specs for every known CSV name under root (recursive, sorted)."""
    specs = []
    for path in sorted(root.rglob("*.csv")):
        entry = KNOWN_FILES.get(path.name)
        if entry is None:
            continue
        kind, companion = entry
        companion_path = path.with_name(companion) if companion else None
        rel = path.relative_to(root).with_suffix("")
        stem = "_".join(rel.parts)
        specs.append(PanelSpec(source_csv=path, kind=kind,
                               output_image=Path(f"{stem}.png"),
                               companion_csv=companion_path))
    return specs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="render_figures",
                                     description="Render attnlab experiment CSVs.")
    parser.add_argument("directory", help="directory to scan for known CSV names")
    parser.add_argument("--out", default=None,
                        help="output directory (default: <directory>/figures)")
    args = parser.parse_args(argv)

    root = Path(args.directory)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else root / "figures"

    specs = discover(root)
    if not specs:
        print(f"no known CSV files under {root}")
        return 0
    rendered = []
    for spec in specs:
        target = out_dir / spec.output_image
        try:
            rendered.append(render(PanelSpec(spec.source_csv, spec.kind, target,
                                             companion_csv=spec.companion_csv)))
        except SchemaMismatch as exc:
            print(f"schema mismatch: {exc}", file=sys.stderr)
            return 1
        print(f"wrote {target}")
    sheet = contact_sheet(rendered, out_dir / "contact_sheet.png")
    print(f"wrote {sheet}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
