"""3D Jacobi proxy application.

The global grid is split into one device-resident block per PE. Each
iteration every block packs its six interior faces into device staging
buffers, ships them to the neighbors through one of five communication
paths, unpacks the arrivals into its ghost ring, and relaxes the
interior with a six-point average. There are no convergence checks; the
iteration count is fixed up front.

The five modes move identical bytes, and the stencil touches memory in
the same order regardless of blocking, so every mode produces the same
field bitwise and matches a single-block sequential run exactly. That
property is what the test suite pins.

Boundary conditions are Dirichlet: the x=0 face of the global domain is
held at 1.0, every other face at 0.0, so heat creeps in from one wall.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .completion import CountingFuture
from .config import VIRTUAL, RuntimeConfig, load_config
from .mpi import mpi_run, rank_result
from .runtime import Chare, DeviceArg, Runtime, entry

MODES = ("host-staging", "messaging-device", "channel-device",
         "mpi-host", "mpi-device")

# direction codes: 0=-x 1=+x 2=-y 3=+y 4=-z 5=+z; d ^ 1 flips the sign
_NDIRS = 6


class JacobiError(RuntimeError):
    pass


# ----------------------------------------------------------- decomposition

def _triples(n: int):
    for px in range(1, n + 1):
        if n % px:
            continue
        rest = n // px
        for py in range(1, rest + 1):
            if rest % py == 0:
                yield px, py, rest // py


def internal_face_area(dims, grid) -> int:
    """Total cell-face area on block boundaries; the communication
    volume per iteration is proportional to it."""
    (nx, ny, nz), (px, py, pz) = dims, grid
    return (px - 1) * ny * nz + (py - 1) * nx * nz + (pz - 1) * nx * ny


def decompose(dims, nblocks: int) -> tuple[int, int, int]:
    """Pick the factorization of nblocks that minimizes communication
    volume; ties break toward lexicographically smallest (px, py)."""
    nx, ny, nz = dims
    best = None
    for grid in _triples(nblocks):
        px, py, pz = grid
        if nx % px or ny % py or nz % pz:
            continue
        key = (internal_face_area(dims, grid), px, py)
        if best is None or key < best[0]:
            best = (key, grid)
    if best is None:
        raise JacobiError(f"{nblocks} blocks cannot tile {dims}")
    return best[1]


def _block_coords(rank: int, grid) -> tuple[int, int, int]:
    px, py, _ = grid
    return rank % px, (rank // px) % py, rank // (px * py)


def neighbor_table(grid, rank: int) -> list[int | None]:
    """Block rank in each of the six directions, None at a domain face."""
    px, py, pz = grid
    coords = _block_coords(rank, grid)
    out: list[int | None] = []
    for d in range(_NDIRS):
        axis, step = d // 2, 1 if d & 1 else -1
        c = list(coords)
        c[axis] += step
        if 0 <= c[axis] < (px, py, pz)[axis]:
            out.append(c[0] + px * (c[1] + py * c[2]))
        else:
            out.append(None)
    return out


# ------------------------------------------------------------- block state

def _face_slices(d: int, interior_plane: bool):
    """Index tuple selecting a face plane of the padded block array:
    the first/last interior plane when packing, the ghost plane when
    unpacking."""
    sl: list = [slice(1, -1)] * 3
    axis = d // 2
    if d & 1:
        sl[axis] = -2 if interior_plane else -1
    else:
        sl[axis] = 1 if interior_plane else 0
    return tuple(sl)


class _BlockCore:
    """Geometry, device buffers, and the stencil for one block.

    Shared verbatim by the chare-based modes and the MPI mains so that
    the floating-point work is literally the same code in all five.
    """

    def __init__(self, dims, grid, rank, alloc):
        nx, ny, nz = dims
        px, py, pz = grid
        self.rank = rank
        self.bx, self.by, self.bz = nx // px, ny // py, nz // pz
        self.coords = _block_coords(rank, grid)
        self.neighbors = neighbor_table(grid, rank)
        self.nbr_dirs = [d for d in range(_NDIRS) if self.neighbors[d] is not None]

        shape = (self.bx + 2, self.by + 2, self.bz + 2)
        nbytes = shape[0] * shape[1] * shape[2] * 8
        self._bufs = [alloc(nbytes), alloc(nbytes)]
        self._views = [b.view(np.float64, shape) for b in self._bufs]
        for v in self._views:
            v[:] = 0.0
            if self.coords[0] == 0:
                v[0, :, :] = 1.0  # hot wall
        self.cur = 0

        ext = (self.bx, self.by, self.bz)
        self.face_shape = [tuple(ext[a] for a in range(3) if a != d // 2)
                           for d in range(_NDIRS)]
        self.face_bytes = [s[0] * s[1] * 8 for s in self.face_shape]
        self.sstage = {}
        self.rstage = [{}, {}]  # two parity sets: a block may lead by one
        self._sview = {}
        self._rview = [{}, {}]
        for d in self.nbr_dirs:
            self.sstage[d] = alloc(self.face_bytes[d])
            self._sview[d] = self.sstage[d].view(np.float64, self.face_shape[d])
            for p in (0, 1):
                self.rstage[p][d] = alloc(self.face_bytes[d])
                self._rview[p][d] = self.rstage[p][d].view(
                    np.float64, self.face_shape[d])

    def pack(self, d: int) -> None:
        self._sview[d][:] = self._views[self.cur][_face_slices(d, True)]

    def unpack_all(self, parity: int) -> None:
        cur = self._views[self.cur]
        for d in self.nbr_dirs:
            cur[_face_slices(d, False)] = self._rview[parity][d]

    def update(self) -> None:
        cur = self._views[self.cur]
        nxt = self._views[self.cur ^ 1]
        nxt[1:-1, 1:-1, 1:-1] = (
            cur[:-2, 1:-1, 1:-1] + cur[2:, 1:-1, 1:-1]
            + cur[1:-1, :-2, 1:-1] + cur[1:-1, 2:, 1:-1]
            + cur[1:-1, 1:-1, :-2] + cur[1:-1, 1:-1, 2:]
        ) / 6.0
        self.cur ^= 1

    def interior(self) -> np.ndarray:
        return self._views[self.cur][1:-1, 1:-1, 1:-1]


# -------------------------------------------------------- sequential oracle

def sequential_oracle(dims, iters: int, hot: float = 1.0,
                      background: float = 0.0, fill: float = 0.0):
    """Single-array reference run. Returns (interior field, residual
    history); residual is the max absolute per-cell change."""
    nx, ny, nz = dims
    g = np.full((nx + 2, ny + 2, nz + 2), background)
    g[1:-1, 1:-1, 1:-1] = fill
    g[0, :, :] = hot
    nxt = g.copy()
    residuals = []
    for _ in range(iters):
        nxt[1:-1, 1:-1, 1:-1] = (
            g[:-2, 1:-1, 1:-1] + g[2:, 1:-1, 1:-1]
            + g[1:-1, :-2, 1:-1] + g[1:-1, 2:, 1:-1]
            + g[1:-1, 1:-1, :-2] + g[1:-1, 1:-1, 2:]
        ) / 6.0
        residuals.append(float(np.max(np.abs(
            nxt[1:-1, 1:-1, 1:-1] - g[1:-1, 1:-1, 1:-1]))))
        g, nxt = nxt, g
    return g[1:-1, 1:-1, 1:-1].copy(), residuals


# -------------------------------------------------------- chare-based modes

class Block(Chare):
    """One block of the domain; drives its own iteration loop."""

    def __init__(self, dims, grid, iters, mode):
        self.dims, self.grid = dims, grid
        self.iters, self.mode = iters, mode
        self.core = _BlockCore(dims, grid, self.index, self.device_alloc)
        self._futs = {}
        self.total_ns = 0.0
        self.comm_ns = 0.0
        self.done = False

    def _arrivals(self, it: int) -> CountingFuture:
        fut = self._futs.get(it)
        if fut is None:
            fut = self._futs[it] = CountingFuture(len(self.core.nbr_dirs))
        return fut

    # halo delivery, device payload: the post hook binds the parity
    # staging buffer for that direction before the payload lands
    def post_halo(self, op, it, d):
        op.bind(self.core.rstage[it & 1][d], size=op.size)

    @entry
    def halo(self, region, it, d):
        self._arrivals(it).contribute()

    @entry
    def halo_host(self, blob, it, d):
        self.runtime.device.host_to_device(self.core.rstage[it & 1][d], blob)
        self._arrivals(it).contribute()

    @entry
    def run(self, ids):
        core = self.core
        chans = {}
        if self.mode == "channel-device":
            for d in core.nbr_dirs:
                nbr = core.neighbors[d]
                a, b = sorted((self.index, nbr))
                chans[d] = self.channel(a * 4096 + b, ids[nbr])
        t_start = self.now
        for it in range(self.iters):
            parity = it & 1
            t_a = self.now
            if self.mode == "channel-device":
                for d in core.nbr_dirs:
                    core.pack(d)
                    chans[d].send(core.sstage[d])
                futs = [chans[d].recv(core.rstage[parity][d])
                        for d in core.nbr_dirs]
                for f in futs:
                    yield f
            elif self.mode == "messaging-device":
                for d in core.nbr_dirs:
                    core.pack(d)
                    self.proxy(ids[core.neighbors[d]]).halo(
                        DeviceArg(core.sstage[d]), it, d ^ 1)
                if core.nbr_dirs:
                    yield self._arrivals(it)
                    del self._futs[it]
            elif self.mode == "host-staging":
                dev = self.runtime.device
                for d in core.nbr_dirs:
                    core.pack(d)
                    blob = dev.device_to_host(core.sstage[d])
                    self.proxy(ids[core.neighbors[d]]).halo_host(blob, it, d ^ 1)
                if core.nbr_dirs:
                    yield self._arrivals(it)
                    del self._futs[it]
            else:
                raise JacobiError(f"mode {self.mode!r} is not chare-based")
            core.unpack_all(parity)
            self.comm_ns += self.now - t_a
            core.update()
        self.total_ns = self.now - t_start
        self.done = True


# ---------------------------------------------------------------- MPI modes

def _mpi_block_main(dims, grid, iters, device_path):
    def main(comm):
        dev = comm._chare.runtime.device
        core = _BlockCore(dims, grid, comm.rank, comm._chare.device_alloc)
        t_start = comm._chare.now
        comm_ns = 0.0
        for it in range(iters):
            parity = it & 1
            t_a = comm._chare.now
            reqs = []
            hbufs = []
            for d in core.nbr_dirs:
                nbr = core.neighbors[d]
                core.pack(d)
                if device_path:
                    reqs.append(comm.isend(core.sstage[d], nbr, tag=d ^ 1))
                    reqs.append(comm.irecv(core.rstage[parity][d],
                                           source=nbr, tag=d))
                else:
                    blob = dev.device_to_host(core.sstage[d])
                    reqs.append(comm.isend(blob, nbr, tag=d ^ 1))
                    hb = bytearray(core.face_bytes[d])
                    hbufs.append((d, hb))
                    reqs.append(comm.irecv(hb, source=nbr, tag=d))
            yield from comm.waitall(reqs)
            for d, hb in hbufs:
                dev.host_to_device(core.rstage[parity][d], bytes(hb))
            core.unpack_all(parity)
            comm_ns += comm._chare.now - t_a
            core.update()
        total_ns = comm._chare.now - t_start
        return core.interior().copy(), total_ns, comm_ns

    return main


# ------------------------------------------------------------------ harness

def _assemble(fields, dims, grid) -> np.ndarray:
    g = np.empty(dims)
    px, py, _ = grid
    bx, by, bz = dims[0] // grid[0], dims[1] // grid[1], dims[2] // grid[2]
    for rank, f in enumerate(fields):
        ix, iy, iz = _block_coords(rank, grid)
        g[ix * bx:(ix + 1) * bx, iy * by:(iy + 1) * by,
          iz * bz:(iz + 1) * bz] = f
    return g


def run_jacobi(dims=(64, 64, 64), iters: int = 100,
               mode: str = "messaging-device", pes: int = 1,
               cfg: RuntimeConfig | None = None, verify: bool = False) -> dict:
    """Run one configuration end to end; returns the assembled field
    plus timing, and the oracle max-norm error when verify is set."""
    if mode not in MODES:
        raise JacobiError(f"unknown mode {mode!r} (choose from {MODES})")
    dims = tuple(dims)
    grid = decompose(dims, pes)
    cfg = (cfg or RuntimeConfig()).with_overrides(workers=pes)

    if mode.startswith("mpi"):
        rt = mpi_run(_mpi_block_main(dims, grid, iters, mode == "mpi-device"),
                     pes, cfg=cfg)
        results = [rank_result(rt, r) for r in range(pes)]
        rt.close()
        fields = [r[0] for r in results]
        total_ns, comm_ns = results[0][1], results[0][2]
    else:
        rt = Runtime(cfg)
        rt.register(Block)
        ids = rt.create(Block, pes, args=(dims, grid, iters, mode),
                        placement=list(range(pes)))
        for cid in ids:
            rt.launch(cid, "run", list(ids))
        rt.start()
        rt.run()
        blocks = [rt.pe(cid.home_pe).chares[(cid.collection, cid.element)]
                  for cid in ids]
        if not all(b.done for b in blocks):
            raise JacobiError("runtime went idle before all blocks finished")
        fields = [b.core.interior().copy() for b in blocks]
        total_ns, comm_ns = blocks[0].total_ns, blocks[0].comm_ns
        rt.close()

    field = _assemble(fields, dims, grid)
    out = {
        "mode": mode, "pes": pes, "dims": dims, "iters": iters,
        "total_ns": float(total_ns), "comm_ns": float(comm_ns),
        "time_mode": cfg.time_mode, "field": field,
    }
    if verify:
        oracle, _ = sequential_oracle(dims, iters)
        out["max_err"] = float(np.max(np.abs(field - oracle)))
    return out


# ---------------------------------------------------------------------- CLI

def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3:
        raise JacobiError(f"dims must be three integers, got {text!r}")
    return tuple(int(p) for p in parts)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="charmlet-jacobi3d",
        description="3D Jacobi halo-exchange proxy on the simulated device runtime")
    ap.add_argument("--dims", default="64,64,64", help="global grid, e.g. 64,64,64")
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--mode", choices=MODES, default="messaging-device")
    ap.add_argument("--pes", type=int, default=1)
    ap.add_argument("--verify", action="store_true",
                    help="compare against the sequential oracle")
    ap.add_argument("--csv", help="append a result row to this file")
    ap.add_argument("--time-mode", choices=("virtual", "wall"), default=None)
    ap.add_argument("--ranks-per-node", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="TOML runtime config file")
    args = ap.parse_args(argv)

    cfg = load_config(args.config) if args.config else RuntimeConfig()
    cfg = cfg.with_overrides(ranks_per_node=args.ranks_per_node, seed=args.seed)
    if args.time_mode:
        cfg = cfg.with_overrides(time_mode=args.time_mode)

    try:
        res = run_jacobi(_parse_dims(args.dims), args.iters, args.mode,
                         args.pes, cfg=cfg, verify=args.verify)
    except JacobiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    dims_s = "x".join(str(d) for d in res["dims"])
    print(f"{res['mode']}  pes={res['pes']}  dims={dims_s}  iters={res['iters']}  "
          f"total={res['total_ns'] / 1000:.3f} us  comm={res['comm_ns'] / 1000:.3f} us")
    if args.verify:
        print(f"verify: max|err| vs sequential oracle = {res['max_err']:.3e}")

    if args.csv:
        with open(args.csv, "a", newline="") as f:
            w = csv.writer(f)
            if f.tell() == 0:
                w.writerow(["mode", "pes", "dims", "iters", "total_time",
                            "comm_time", "unit", "time_mode"])
            w.writerow([res["mode"], res["pes"], dims_s, res["iters"],
                        f"{res['total_ns'] / 1000:.4f}",
                        f"{res['comm_ns'] / 1000:.4f}", "us", res["time_mode"]])
    return 0


if __name__ == "__main__":
    sys.exit(main())
