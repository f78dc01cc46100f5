"""Test-set evaluation and the misclassification analyses: error rate,
confusion matrix, per-error top-2 predictions, second-guess statistics.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deform import GRID, upscale_dataset
from .mnist_io import Dataset
from .network import Mlp, forward_batch, rank_outputs
from .pgm import write_pgm

N_CLASSES = 10


@dataclass
class Misclassified:
    index: int
    true: int
    guess1: int
    guess2: int
    image: np.ndarray  # the 29x29 network input


@dataclass
class EvalReport:
    error_percent: float
    misclassified: list[Misclassified]
    confusion: np.ndarray  # (10, 10) counts, rows = true digit
    second_guess_correct: int
    n_samples: int


def evaluate(mlp: Mlp, test: Dataset) -> EvalReport:
    """Rank every test sample and aggregate errors; pure in (mlp, test)."""
    inputs = upscale_dataset(test)
    outputs = forward_batch(mlp, inputs)
    ranked = rank_outputs(outputs)
    guess1 = ranked[:, 0]
    guess2 = ranked[:, 1]
    truth = test.labels.astype(np.int64)

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (truth, guess1), 1)

    wrong = np.nonzero(guess1 != truth)[0]
    misclassified = [
        Misclassified(
            index=int(i),
            true=int(truth[i]),
            guess1=int(guess1[i]),
            guess2=int(guess2[i]),
            image=inputs[i].reshape(GRID, GRID),
        )
        for i in wrong
    ]
    second_correct = int(np.count_nonzero(guess2[wrong] == truth[wrong]))
    n = len(test)
    return EvalReport(
        error_percent=100.0 * len(wrong) / n if n else 0.0,
        misclassified=misclassified,
        confusion=confusion,
        second_guess_correct=second_correct,
        n_samples=n,
    )


def format_summary(report: EvalReport) -> str:
    """Human-readable summary; error rate printed with two decimals."""
    lines = [
        f"test error: {report.error_percent:.2f}% "
        f"({len(report.misclassified)} of {report.n_samples})",
        f"second guess correct for {report.second_guess_correct} "
        f"of {len(report.misclassified)} misclassified",
        "confusion matrix (rows = true digit):",
    ]
    header = "     " + " ".join(f"{d:>5d}" for d in range(N_CLASSES))
    lines.append(header)
    for d in range(N_CLASSES):
        row = " ".join(f"{int(c):>5d}" for c in report.confusion[d])
        lines.append(f"  {d}: {row}")
    return "\n".join(lines)


def render_misclassified(report: EvalReport, out_dir) -> Path:
    """One PGM per misclassified digit plus a TSV manifest; returns the
    manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "misclassified.tsv"
    rows = ["file\tindex\ttrue\tguess1\tguess2"]
    for m in report.misclassified:
        name = f"miss_{m.index:05d}.pgm"
        write_pgm(out_dir / name, m.image)
        rows.append(f"{name}\t{m.index}\t{m.true}\t{m.guess1}\t{m.guess2}")
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
