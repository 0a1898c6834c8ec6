"""Structural validation of SKJ1 sketch files, reporting every problem found."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pysketch.sketch import GRID, MAGIC, VERSION, _FILE_HEADER


@dataclass(frozen=True)
class SketchReport:
    """Outcome of validating one file; ok means no problems were found."""

    path: str
    ok: bool
    problems: tuple[str, ...] = ()
    width: int = 0
    height: int = 0
    n_s: int = 0
    seed: int = 0
    tag: str = ""
    nan_count: int = 0
    inf_count: int = 0

    def summary(self) -> str:
        if self.ok:
            return (
                f"OK: {self.width}x{self.height} grid, {self.n_s} rows, "
                f"seed {self.seed}, tag {self.tag!r}"
            )
        return "\n".join(f"invalid: {p}" for p in self.problems)


def validate_sketch(path: str) -> SketchReport:
    """Check an SKJ1 file's header, payload size, and entry finiteness."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _FILE_HEADER.size:
        return SketchReport(
            path=path,
            ok=False,
            problems=(f"file is {len(data)} bytes, shorter than the {_FILE_HEADER.size}-byte header",),
        )
    magic, version, width, height, n_s, seed, tag_len = _FILE_HEADER.unpack_from(data)
    if magic != MAGIC:
        return SketchReport(
            path=path, ok=False, problems=(f"bad magic {magic!r}, expected {MAGIC!r}",)
        )
    if version != VERSION:
        return SketchReport(
            path=path, ok=False, problems=(f"unsupported version {version}",)
        )
    problems: list[str] = []
    if width <= 0 or height <= 0 or width % GRID or height % GRID:
        problems.append(f"grid {width}x{height} is not positive and divisible by {GRID}")
    if n_s < 1:
        problems.append(f"row count {n_s} is not >= 1")
    pos = _FILE_HEADER.size
    tag = ""
    if len(data) < pos + tag_len:
        problems.append("source tag truncated")
    else:
        try:
            tag = data[pos : pos + tag_len].decode("utf-8")
        except UnicodeDecodeError:
            problems.append("source tag is not valid UTF-8")
    if problems:
        return SketchReport(
            path=path, ok=False, problems=tuple(problems),
            width=width, height=height, n_s=n_s, seed=seed, tag=tag,
        )
    pos += tag_len
    expected = n_s * width * height * 4
    if len(data) - pos != expected:
        return SketchReport(
            path=path, ok=False,
            problems=(f"payload is {len(data) - pos} bytes, header implies {expected}",),
            width=width, height=height, n_s=n_s, seed=seed, tag=tag,
        )
    entries = np.frombuffer(data, dtype="<f4", count=n_s * width * height, offset=pos)
    nan_count = int(np.isnan(entries).sum())
    inf_count = int(np.isinf(entries).sum())
    if nan_count:
        problems.append(f"{nan_count} NaN entries")
    if inf_count:
        problems.append(f"{inf_count} infinite entries")
    return SketchReport(
        path=path, ok=not problems, problems=tuple(problems),
        width=width, height=height, n_s=n_s, seed=seed, tag=tag,
        nan_count=nan_count, inf_count=inf_count,
    )
