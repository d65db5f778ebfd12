"""Reading UCR-archive style files into labelled, z-normalized series.

A UCR file holds one series per line: the class label first, then the
values, separated by tabs or commas (detected from the first non-empty line;
runs of whitespace are accepted as a fallback for the older archive layout).
Only univariate, equal-length datasets are supported.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError


@dataclass(frozen=True)
class LabeledSeries:
    values: np.ndarray
    label: str
    class_index: int = -1

    def __len__(self):
        return len(self.values)


@dataclass
class SplitDataset:
    name: str
    train: list[LabeledSeries]
    test: list[LabeledSeries]
    label_map: dict[str, int]
    length: int

    @property
    def num_classes(self) -> int:
        return len(self.label_map)


def _detect_delimiter(line: str) -> str | None:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # whitespace


def parse_ucr_file(path) -> list[LabeledSeries]:
    """Parse one split file. Labels stay as their original tokens."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    delim = None
    detected = False
    out: list[LabeledSeries] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if not detected:
            delim, detected = _detect_delimiter(line), True
        tokens = [t.strip() for t in (line.split(delim) if delim else line.split())]
        if len(tokens) < 2:
            raise ParseError("expected a label followed by at least one value", path=path, line=lineno)
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError(
                f"ragged line: {len(tokens) - 1} values, expected {width - 1}", path=path, line=lineno
            )
        try:
            values = np.array([float(t) for t in tokens[1:]], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"non-numeric value ({exc})", path=path, line=lineno) from None
        if not np.all(np.isfinite(values)):
            raise ParseError(
                "non-finite value; variable-length or missing-value datasets are not supported",
                path=path,
                line=lineno,
            )
        out.append(LabeledSeries(values, tokens[0]))
    if not out:
        raise ParseError("empty file", path=path)
    return out


def z_normalize(values) -> np.ndarray:
    """Per-series ``(x - mean) / std`` with population std; all zeros when std < 1e-8."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 1:
        raise ContractError("cannot normalize an empty series")
    mu = x.mean()
    sd = x.std()
    if sd < 1e-8:
        return np.zeros_like(x)
    return (x - mu) / sd


def _label_key(token: str):
    return float(token)


def sorted_labels(tokens) -> list[str]:
    """Numeric order when every token parses as a number, else lexicographic."""
    uniq = set(tokens)
    try:
        return sorted(uniq, key=lambda t: (_label_key(t), t))
    except ValueError:
        return sorted(uniq)


def build_label_map(tokens) -> dict[str, int]:
    return {tok: i for i, tok in enumerate(sorted_labels(tokens))}


def apply_label_map(series: list[LabeledSeries], label_map: dict[str, int], *, normalize=True) -> list[LabeledSeries]:
    missing = sorted({s.label for s in series} - label_map.keys())
    if missing:
        raise ContractError(f"labels not in label map: {', '.join(missing)}")
    return [
        LabeledSeries(z_normalize(s.values) if normalize else s.values, s.label, label_map[s.label])
        for s in series
    ]


def build_split(train_path, test_path, name: str | None = None) -> SplitDataset:
    """Parse both splits, index labels from the training split, z-normalize every series."""
    train = parse_ucr_file(train_path)
    test = parse_ucr_file(test_path)
    m_train, m_test = len(train[0]), len(test[0])
    if m_train != m_test:
        raise ContractError(f"series length differs between splits: train {m_train}, test {m_test}")
    unseen = sorted({s.label for s in test} - {s.label for s in train}, key=str)
    if unseen:
        raise ContractError(f"test labels never seen in training: {', '.join(unseen)}")
    label_map = build_label_map(s.label for s in train)
    if name is None:
        name = Path(train_path).name.split("_")[0]
    return SplitDataset(
        name=name,
        train=apply_label_map(train, label_map),
        test=apply_label_map(test, label_map),
        label_map=label_map,
        length=m_train,
    )


def find_split_files(directory, name: str) -> tuple[Path, Path]:
    """Locate ``<name>_TRAIN`` / ``<name>_TEST`` files under ``directory`` or ``directory/<name>``."""
    base = Path(directory)
    for root in (base / name, base):
        for ext in (".tsv", ".txt", ".csv", ""):
            tr, te = root / f"{name}_TRAIN{ext}", root / f"{name}_TEST{ext}"
            if tr.is_file() and te.is_file():
                return tr, te
    raise FileNotFoundError(f"no {name}_TRAIN/{name}_TEST files under {base}")


def format_ucr(series: list[LabeledSeries], delimiter: str = "\t") -> str:
    """Delimited text that :func:`parse_ucr_file` reads back bit-for-bit."""
    return "".join(
        delimiter.join([s.label] + [repr(float(v)) for v in s.values]) + "\n" for s in series
    )


def write_ucr_file(path, series: list[LabeledSeries], delimiter: str = "\t") -> None:
    Path(path).write_text(format_ucr(series, delimiter))
