from __future__ import annotations

import numpy as np

from .report import ResultRow
from .snr import seg_snr, si_sdr
from .stoi import stoi


def score_channels(system: str, utterance: str, noise: str, snr_db: float, clean: np.ndarray,
                   estimate: np.ndarray, sample_rate: int, with_stoi: bool = True) -> list[ResultRow]:
    """One result row per channel; each channel is scored against its own clean reference."""
    clean = np.asarray(clean)
    estimate = np.asarray(estimate)
    if clean.shape != estimate.shape:
        raise ValueError(f"clean {clean.shape} and estimate {estimate.shape} differ in shape")
    rows = []
    for ch in range(clean.shape[0]):
        r, e = clean[ch], estimate[ch]
        rows.append(ResultRow(
            system, utterance, ch, noise, float(snr_db),
            si_sdr=si_sdr(r, e),
            seg_snr=seg_snr(r, e),
            stoi=stoi(r, e, sample_rate) if with_stoi else float("nan"),
        ))
    return rows
