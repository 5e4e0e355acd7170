"""Two-thread pipeline: the front-end feeds keyframe packets to the mapper over a bounded queue."""

from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from ..frontend.system import FrontEnd
from ..geometry import PinholeCamera, Se3Pose
from ..images import save_png
from ..mapping.gaussians import export_ply
from ..mapping.optimizer import MapOptimizer
from ..packet import KeyframePacket
from .config import PipelineConfig, to_dict
from .metrics import ate_rmse, psnr, ssim
from .tum import write_trajectory

log = logging.getLogger(__name__)

_DONE = object()


class FrameSource(Protocol):
    cam: PinholeCamera
    timestamps: np.ndarray

    def __len__(self) -> int: ...

    def image(self, i: int) -> np.ndarray: ...

    def depth(self, i: int) -> np.ndarray | None: ...


@dataclass
class EvalReport:
    frames: int = 0
    keyframes: int = 0
    eval_frames: list[int] = field(default_factory=list)
    psnr: float | None = None
    ssim: float | None = None
    psnr_per_frame: list[float] = field(default_factory=list)
    ate_rmse: float | None = None
    map_size_bytes: int = 0
    gaussian_count: int = 0
    mapper_iterations: int = 0
    lost_frames: int = 0
    marginalizations: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v
        return json.dumps(clean(asdict(self)), indent=2)


@dataclass
class PipelineHooks:
    # Called on the mapper thread before each packet is consumed.
    before_packet: Callable[[KeyframePacket], None] | None = None
    # Called on the front-end thread just before each packet is enqueued.
    before_put: Callable[[KeyframePacket], None] | None = None
    # Called on the front-end thread after each packet was enqueued, with the seconds spent blocked.
    after_put: Callable[[KeyframePacket, float], None] | None = None


@dataclass
class PipelineResult:
    report: EvalReport
    trajectory: list[tuple[float, Se3Pose]]
    frontend: FrontEnd
    mapper: MapOptimizer
    sent: list[int] = field(default_factory=list)
    received: list[int] = field(default_factory=list)
    max_queue_depth: int = 0
    blocked_seconds: float = 0.0


def _rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


class Pipeline:
    def __init__(self, source: FrameSource, cfg: PipelineConfig = PipelineConfig(), seed: int = 0,
                 out_dir: str | Path | None = None, hooks: PipelineHooks | None = None):
        self.source = source
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.hooks = hooks or PipelineHooks()
        self.frontend = FrontEnd(source.cam, cfg.frontend, seed)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        log_path = self.out_dir / "iterations.csv" if self.out_dir is not None else None
        # The mapper gets its own stream so its randomness is independent of the front-end's.
        self.mapper = MapOptimizer(source.cam, cfg.mapper, seed + 1, log_path)
        self.queue: queue.Queue = queue.Queue(maxsize=cfg.queue_capacity)
        self.sent: list[int] = []
        self.received: list[int] = []
        self.max_queue_depth = 0
        self.blocked_seconds = 0.0
        self._errors: list[BaseException] = []
        self._timings: dict[str, float] = {}
        self._n_frames = len(source) if cfg.max_frames is None else min(len(source), cfg.max_frames)

    # Threads ------------------------------------------------------------------------

    def _frontend_loop(self) -> None:
        start = time.perf_counter()
        oracle = self.cfg.frontend.depth.mode == "oracle"
        ts = np.asarray(self.source.timestamps, dtype=np.float64)
        exposures = getattr(self.source, "exposures", None)
        try:
            for i in range(self._n_frames):
                if self.cfg.pace:
                    delay = (ts[i] - ts[0]) - (time.perf_counter() - start)
                    if delay > 0:
                        time.sleep(delay)
                depth = self.source.depth(i) if oracle else None
                exposure = float(exposures[i]) if exposures is not None else 1.0
                res = self.frontend.process(i, float(ts[i]), self.source.image(i), depth, exposure)
                if res.packet is not None:
                    if self.hooks.before_put is not None:
                        self.hooks.before_put(res.packet)
                    t0 = time.perf_counter()
                    self.queue.put(res.packet)
                    waited = time.perf_counter() - t0
                    self.blocked_seconds += waited
                    self.sent.append(res.packet.keyframe_id)
                    self.max_queue_depth = max(self.max_queue_depth, self.queue.qsize())
                    if self.hooks.after_put is not None:
                        self.hooks.after_put(res.packet, waited)
        except BaseException as exc:  # noqa: BLE001 - re-raised by run()
            self._errors.append(exc)
        finally:
            self.queue.put(_DONE)
            self._timings["frontend_s"] = time.perf_counter() - start

    def _iterate(self) -> None:
        if len(self.mapper.map) and self.mapper.keyframes:
            self.mapper.optimize_iteration()

    def _mapper_loop(self) -> None:
        start = time.perf_counter()
        failed = False
        while True:
            if self.cfg.continuous and not failed:
                try:
                    item = self.queue.get_nowait()
                except queue.Empty:
                    if len(self.mapper.map):
                        self._iterate()
                    else:
                        time.sleep(0.001)
                    continue
            else:
                item = self.queue.get()
            if item is _DONE:
                break
            if failed:
                continue  # keep draining so the front-end never blocks forever
            try:
                if self.hooks.before_packet is not None:
                    self.hooks.before_packet(item)
                self.received.append(item.keyframe_id)
                self.mapper.add_packet(item)
                if not self.cfg.continuous:
                    for _ in range(self.cfg.iterations_per_packet):
                        self._iterate()
            except BaseException as exc:  # noqa: BLE001 - re-raised by run()
                self._errors.append(exc)
                failed = True
        try:
            if not failed:
                for _ in range(self.cfg.final_iterations):
                    self._iterate()
        except BaseException as exc:  # noqa: BLE001
            self._errors.append(exc)
        self._timings["mapper_s"] = time.perf_counter() - start

    # Orchestration --------------------------------------------------------------------

    def run(self) -> PipelineResult:
        t0 = time.perf_counter()
        report = EvalReport()
        try:
            threads = [threading.Thread(target=self._frontend_loop, name="frontend"),
                       threading.Thread(target=self._mapper_loop, name="mapper")]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
            if self._errors:
                raise self._errors[0]
            self._evaluate(report)
        except BaseException as exc:
            report.error = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            report.timings = dict(self._timings, total_s=time.perf_counter() - t0)
            self._fill_counts(report)
            self._export(report)
            self.mapper.close()
        return PipelineResult(report, self.frontend.trajectory(), self.frontend, self.mapper, list(self.sent),
                              list(self.received), self.max_queue_depth, self.blocked_seconds)

    def _fill_counts(self, report: EvalReport) -> None:
        st = self.frontend.stats
        report.frames = st.frames
        report.keyframes = st.insertions
        report.lost_frames = st.lost_frames
        report.marginalizations = st.marginalizations
        report.gaussian_count = len(self.mapper.map)
        report.mapper_iterations = self.mapper.iteration
        report.map_size_bytes = self.mapper.map.size_bytes()

    def _evaluate(self, report: EvalReport) -> None:
        start = time.perf_counter()
        traj = self.frontend.trajectory()
        report.eval_frames = [i for i in range(len(traj)) if i % self.cfg.eval_every == 0]
        psnrs, ssims = [], []
        render_dir = None
        if self.cfg.save_renders and self.out_dir is not None:
            render_dir = self.out_dir / "renders"
            render_dir.mkdir(exist_ok=True)
        for i in report.eval_frames:
            img = self.mapper.render_view(traj[i][1])
            gt = _rgb(self.source.image(i))
            psnrs.append(psnr(img, gt))
            ssims.append(ssim(img, gt, self.cfg.mapper.loss))
            if render_dir is not None:
                save_png(render_dir / f"{i:06d}.png", img)
        if psnrs:
            report.psnr_per_frame = [float(p) for p in psnrs]
            report.psnr = float(np.mean(psnrs))
            report.ssim = float(np.mean(ssims))
        gt_traj = getattr(self.source, "gt_trajectory", None)
        if gt_traj:
            try:
                report.ate_rmse = ate_rmse(traj, gt_traj)
            except ValueError as exc:
                log.warning("ATE not computed: %s", exc)
        self._timings["eval_s"] = time.perf_counter() - start

    def _export(self, report: EvalReport) -> None:
        if self.out_dir is None:
            return
        out = self.out_dir
        (out / "config.json").write_text(json.dumps(to_dict(self.cfg), indent=2))
        try:
            write_trajectory(out / "trajectory.txt", self.frontend.trajectory())
        except Exception as exc:  # noqa: BLE001 - best effort when flushing after a failure
            log.warning("trajectory not written: %s", exc)
        report.map_size_bytes = export_ply(self.mapper.map, out / "map.ply")
        (out / "report.json").write_text(report.to_json())


def run_pipeline(source: FrameSource, cfg: PipelineConfig = PipelineConfig(), seed: int = 0,
                 out_dir: str | Path | None = None, hooks: PipelineHooks | None = None) -> PipelineResult:
    return Pipeline(source, cfg, seed, out_dir, hooks).run()
