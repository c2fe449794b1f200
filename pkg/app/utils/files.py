"""실행 결과 파일 출력

주요 기능:
- convergence.csv / estimate_NNN.csv (pandas, 고정 %.16e 포맷)
- mesh_NNN.svg, convergence.svg (matplotlib Agg)
- mesh_NNN.vtu (meshio, 요소 데이터 포함)

같은 입력이면 바이트 단위로 같은 파일을 씁니다.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import meshio  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)


FLOAT_FORMAT = "%.16e"

CONVERGENCE_COLUMNS = (
    "step",
    "nelems",
    "ndof_total",
    "ndof_skeleton",
    "error",
    "eta",
    "eta_cf",
    "eta_nc",
    "eta_jump",
    "effectivity",
    "seconds",
)

# SVG 출력의 id 해시와 날짜 메타데이터 고정
plt.rcParams["svg.hashsalt"] = "hdg-adaptive"
SVG_METADATA = {"Date": None, "Creator": None}


def step_name(prefix: str, step: int, suffix: str) -> str:
    """mesh_000.svg 형식 파일명"""
    return f"{prefix}_{step:03d}.{suffix}"


# ===== CSV =====

def convergence_frame(records: Sequence, timing: bool = False) -> pd.DataFrame:
    """
    ConvergenceRecord 목록 → convergence.csv 표

    Args:
        records: ConvergenceRecord 목록
        timing: False 면 seconds 열을 비움
    """
    rows = [
        {
            "step": r.step,
            "nelems": r.n_elements,
            "ndof_total": r.ndof_total,
            "ndof_skeleton": r.ndof_skeleton,
            "error": r.error,
            "eta": r.eta,
            "eta_cf": r.eta_cf,
            "eta_nc": r.eta_nc,
            "eta_jump": r.eta_jump,
            "effectivity": r.effectivity,
            "seconds": r.seconds if timing else None,
        }
        for r in records
    ]
    frame = pd.DataFrame(rows, columns=list(CONVERGENCE_COLUMNS))
    for column in ("step", "nelems", "ndof_total", "ndof_skeleton"):
        frame[column] = frame[column].astype("int64")
    for column in CONVERGENCE_COLUMNS[4:]:
        frame[column] = frame[column].astype("float64")
    return frame


def convergence_csv_text(records: Sequence, timing: bool = False) -> str:
    """convergence.csv 내용 문자열"""
    return convergence_frame(records, timing).to_csv(
        index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n"
    )


def write_convergence_csv(path: str | Path, records: Sequence, timing: bool = False) -> Path:
    path = Path(path)
    path.write_text(convergence_csv_text(records, timing))
    logger.debug("Convergence table written", path=str(path), rows=len(records))
    return path


def write_estimate_csv(path: str | Path, estimate) -> Path:
    """요소별 지표 (element, eta_cf, eta_nc, jump, osc, a)"""
    path = Path(path)
    frame = pd.DataFrame(
        {
            "element": np.arange(estimate.n_elements),
            "eta_cf": estimate.eta_cf,
            "eta_nc": estimate.eta_nc,
            "jump": estimate.jump,
            "osc": estimate.osc,
            "a": estimate.coefficient,
        }
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


# ===== 그림 =====

def write_mesh_svg(
    path: str | Path,
    mesh,
    values: Optional[np.ndarray] = None,
    marked: Optional[Iterable[int]] = None,
) -> Path:
    """
    메쉬 SVG

    Args:
        values: 요소별 색칠 값 (예: η_K), 없으면 선만 그림
        marked: 강조할 요소
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 6))
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    if values is not None:
        shaded = ax.tripcolor(x, y, mesh.triangles, facecolors=np.asarray(values, dtype=float), cmap="viridis")
        fig.colorbar(shaded, ax=ax, shrink=0.8)
    ax.triplot(x, y, mesh.triangles, color="black", linewidth=0.4)
    if marked is not None:
        marked = np.asarray(sorted(marked), dtype=np.int64)
        if len(marked):
            centroids = mesh.centroids[marked]
            ax.plot(centroids[:, 0], centroids[:, 1], "r.", markersize=2)
    ax.set_aspect("equal")
    ax.set_axis_off()
    fig.savefig(path, format="svg", metadata=SVG_METADATA, bbox_inches="tight")
    plt.close(fig)
    return path


def write_convergence_svg(path: str | Path, records: Sequence) -> Path:
    """오차와 η 대 전체 DOF 로그-로그 그래프"""
    path = Path(path)
    dofs = np.array([r.ndof_total for r in records], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(dofs, [r.eta for r in records], "o-", label="estimator")
    errors = [r.error for r in records]
    if all(e is not None for e in errors) and errors:
        ax.loglog(dofs, errors, "s-", label="error")
    ax.set_xlabel("total DOFs")
    ax.grid(True, which="both", linewidth=0.3)
    ax.legend()
    fig.savefig(path, format="svg", metadata=SVG_METADATA, bbox_inches="tight")
    plt.close(fig)
    return path


# ===== VTU =====

def write_mesh_vtu(path: str | Path, mesh, cell_data: Optional[Mapping[str, np.ndarray]] = None) -> Path:
    """
    VTU 출력

    Raises:
        ValueError: cell_data 길이가 요소 수와 다름
    """
    path = Path(path)
    points = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    vtu = meshio.Mesh(points=points, cells=[("triangle", np.asarray(mesh.triangles, dtype=np.int64))])
    if cell_data:
        normalized = {}
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape[0] != mesh.n_elements:
                raise ValueError(f"cell_data['{name}'] has {values.shape[0]} rows, expected {mesh.n_elements}")
            normalized[name] = [values]
        vtu.cell_data = normalized
    vtu.write(str(path))
    return path
