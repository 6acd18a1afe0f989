"""
Rarefy — Stage Telemetry Monitor
Per-stage training metrics and process memory, with a static Plotly chart.

The metrics CSV is a run artifact and holds only values that repeat exactly
under the same seed; wall-clock time and memory go to a separate timing CSV.
"""

import time
from pathlib import Path
from typing import List

import pandas as pd
import plotly.graph_objects as go
import psutil
from plotly.subplots import make_subplots

from config.settings import VERBOSE

STAGE_COLUMNS = [
    "stage", "policy", "labels_stage", "labels_spent", "labeled_rare", "alpha_hat", "weight",
    "d_loss", "g_loss", "c_loss", "rare_hit_rate",
]
TIMING_COLUMNS = ["stage", "seconds", "elapsed_s", "rss_mb"]
CHART_DIV_ID = "rarefy-stage-metrics"


class StageMonitor:
    """
    Collects one row per training stage.

    Usage:
        monitor = StageMonitor()
        state, metrics = train(config, schema, oracle, monitor=monitor)
        monitor.export_csv("runs/x/stage_metrics.csv")
        monitor.write_chart("runs/x/stage_metrics.html")
        monitor.export_timing_csv("runs/x/stage_timing.csv")
    """

    def __init__(self):
        self._log: List[dict] = []
        self._timing: List[dict] = []
        self._start = time.time()
        self._last = self._start
        self._process = psutil.Process()
        self._peak_rss = 0.0

    def log_stage(self, metrics: dict):
        """Record a stage's metrics; time since the previous stage and RSS go to the timing log."""
        now = time.time()
        rss_mb = self._process.memory_info().rss / (1024 ** 2)
        self._peak_rss = max(self._peak_rss, rss_mb)
        self._log.append(dict(metrics))
        self._timing.append({
            "stage": metrics.get("stage"),
            "seconds": round(now - self._last, 2),
            "elapsed_s": round(now - self._start, 2),
            "rss_mb": round(rss_mb, 1),
        })
        self._last = now
        self._print(f"stage {metrics.get('stage')} logged | rss={rss_mb:.1f} MB")

    @property
    def peak_rss_mb(self) -> float:
        return self._peak_rss

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self._log)
        ordered = [c for c in STAGE_COLUMNS if c in frame.columns]
        return frame[ordered + [c for c in frame.columns if c not in ordered]]

    def export_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if not self._log:
            pd.DataFrame(columns=STAGE_COLUMNS).to_csv(path, index=False)
        else:
            self.frame().to_csv(path, index=False)
        return path

    def export_timing_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self._timing, columns=TIMING_COLUMNS).to_csv(path, index=False)
        return path

    def generate_chart(self) -> go.Figure:
        """Losses on the left panel, α̂ and classifier rare-hit rate on the right."""
        fig = make_subplots(rows=1, cols=2, subplot_titles=("Mean losses", "α̂ / rare-hit rate"))
        if not self._log:
            fig.add_annotation(
                x=0.5, y=0.5, xref="paper", yref="paper",
                text="No stages recorded",
                showarrow=False,
                font=dict(size=14, color="rgba(148, 163, 184, 0.6)"),
            )
        else:
            frame = self.frame()
            for col, color in (("d_loss", "#60a5fa"), ("g_loss", "#f59e0b"), ("c_loss", "#a78bfa")):
                fig.add_trace(go.Scatter(
                    x=frame["stage"], y=frame[col], mode="lines+markers", name=col,
                    line=dict(color=color, width=2),
                ), row=1, col=1)
            fig.add_trace(go.Scatter(
                x=frame["stage"], y=frame["alpha_hat"], mode="lines+markers", name="alpha_hat",
                line=dict(color="#22c55e", width=2),
            ), row=1, col=2)
            fig.add_trace(go.Scatter(
                x=frame["stage"], y=frame["rare_hit_rate"], mode="lines+markers", name="rare_hit_rate",
                line=dict(color="#ef4444", width=2, dash="dot"),
            ), row=1, col=2)

        fig.update_xaxes(title_text="Stage", dtick=1)
        fig.update_layout(
            title=dict(text="<b>TRAINING STAGES</b>", font=dict(size=13, color="#94a3b8"), x=0.01),
            template="plotly_dark",
            height=380,
            margin=dict(l=50, r=16, t=56, b=44),
            legend=dict(orientation="h", yanchor="bottom", y=1.08, xanchor="right", x=1),
        )
        return fig

    def write_chart(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.generate_chart().write_html(str(path), include_plotlyjs="cdn", div_id=CHART_DIV_ID)
        return path

    def _print(self, msg: str):
        if VERBOSE:
            print(f"[StageMonitor {time.time() - self._start:.1f}s] {msg}")
