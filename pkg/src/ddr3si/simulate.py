"""Time-domain engine: Bergeron lines, trapezoidal capacitors, nonlinear drivers.

Every transmission-line end is replaced by its characteristic conductance
in parallel with a history current source carrying the wave launched from
the far end one delay earlier. Within a time step the lines therefore
decouple the network into small clusters; the linear part of each cluster
is pre-inverted once and only the driver pads need an iterative solve.

A symmetric coupled pair is split into its even and odd modes, each a
Bergeron line of its own, with the modal/conductor transformation folded
into the conductance stamps and history injections.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit
from .stimulus import weight_trace
from .waveforms import WaveformSet

log = logging.getLogger(__name__)

CURRENT_TOL = 1e-6  # A, residual of the per-node current balance
MAX_ITER = 100
GMIN = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, node, time, residual):
        self.node, self.time, self.residual = node, time, residual
        super().__init__(
            f"node {node!r} failed to converge at t={time:.6e} s (residual {residual:.3e} A)"
        )


def default_timestep(c: Circuit, ui: float | None = None) -> float:
    """min(line td)/16, further capped so that ``ui/dt >= 64``."""
    tds = [ln.td for ln in c.lines] + [t for cl in c.coupled for t in (cl.td_even, cl.td_odd)]
    dt = min(tds) / 16 if tds else (ui / 64 if ui else 1e-12)
    if ui is not None:
        dt = min(dt, ui / 64)
    return dt


def pwl_eval(points, t: np.ndarray) -> np.ndarray:
    """Right-continuous piecewise-linear waveform; holds end values."""
    ts = np.array([p[0] for p in points], dtype=float)
    vs = np.array([p[1] for p in points], dtype=float)
    k = np.searchsorted(ts, t, side="right") - 1
    out = np.empty_like(t, dtype=float)
    before = k < 0
    after = k >= len(ts) - 1
    out[before] = vs[0]
    out[after] = vs[-1]
    mid = ~(before | after)
    km = k[mid]
    span = ts[km + 1] - ts[km]
    out[mid] = vs[km] + (vs[km + 1] - vs[km]) * (t[mid] - ts[km]) / span
    return out


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _solve_scalar(g, b, fn, v0, where, t):
    """Root of ``g*v - b + fn(v)[0]`` with Newton steps safeguarded by
    bisection. The residual is strictly increasing (g > 0, fn monotone)."""
    lo, hi = -math.inf, math.inf
    v = v0
    r_prev = math.inf
    bisect_next = False
    for _ in range(MAX_ITER):
        i, di = fn(v)
        r = g * v - b + i
        if abs(r) < CURRENT_TOL:
            return v
        if r > 0:
            hi = min(hi, v)
        else:
            lo = max(lo, v)
        if bisect_next and math.isfinite(lo) and math.isfinite(hi):
            v_new = 0.5 * (lo + hi)
        else:
            v_new = v - r / (g + di)
            if not lo < v_new < hi:
                if math.isfinite(lo) and math.isfinite(hi):
                    v_new = 0.5 * (lo + hi)
                else:
                    v_new = lo + 0.5 if math.isfinite(lo) else hi - 0.5
        bisect_next = abs(r) > 0.5 * abs(r_prev)
        r_prev = r
        v = v_new
    raise ConvergenceError(where, t, r)


@dataclass
class _Block:
    """A cluster of nodes coupled through lumped elements."""

    idx: np.ndarray
    ginv: np.ndarray
    nl_local: list[int] = field(default_factory=list)
    nl_fns: list[int] = field(default_factory=list)  # indices into driver list
    m: np.ndarray | None = None
    minv: np.ndarray | None = None
    rcols: np.ndarray | None = None
    g_scalar: float = 0.0


class _Network:
    """Constant conductance matrix with nonlinear one-port devices."""

    def __init__(self, G: np.ndarray, nl_nodes: list[int], names: list[str]):
        n = G.shape[0]
        self.n = n
        self.names = names
        diag = np.diag(G).copy()
        G = G.copy()
        G[np.arange(n), np.arange(n)] += np.where(diag == 0, GMIN, 0.0)
        uf = _UnionFind(n)
        rows, cols = np.nonzero(G)
        for r_, c_ in zip(rows, cols):
            if r_ != c_:
                uf.union(int(r_), int(c_))
        groups: dict[int, list[int]] = {}
        for k in range(n):
            groups.setdefault(uf.find(k), []).append(k)
        nl_of_node: dict[int, list[int]] = {}
        for j, node in enumerate(nl_nodes):
            nl_of_node.setdefault(node, []).append(j)

        singles, blocks = [], []
        for members in groups.values():
            has_nl = any(m in nl_of_node for m in members)
            if len(members) == 1 and not has_nl:
                singles.append(members[0])
                continue
            idx = np.array(members)
            sub = G[np.ix_(idx, idx)]
            if np.linalg.cond(sub) > 1e14:
                sub = sub + GMIN * np.eye(len(idx))
            blk = _Block(idx=idx, ginv=np.linalg.inv(sub))
            for loc, node in enumerate(members):
                for j in nl_of_node.get(node, []):
                    blk.nl_local.append(loc)
                    blk.nl_fns.append(j)
            if blk.nl_local:
                nl = blk.nl_local
                blk.m = blk.ginv[np.ix_(nl, nl)]
                blk.minv = np.linalg.inv(blk.m)
                blk.rcols = blk.ginv[:, nl]
                if len(members) == 1:
                    blk.g_scalar = float(sub[0, 0])
            blocks.append(blk)
        self.singles = np.array(sorted(singles), dtype=int)
        self.singles_ginv = 1.0 / G[self.singles, self.singles] if len(singles) else np.zeros(0)
        self.blocks = blocks

    def solve(self, b: np.ndarray, v_prev: np.ndarray, fns, t: float) -> np.ndarray:
        v = np.empty(self.n)
        s = self.singles
        v[s] = b[s] * self.singles_ginv
        for blk in self.blocks:
            if not blk.nl_local:
                v[blk.idx] = blk.ginv @ b[blk.idx]
                continue
            if len(blk.idx) == 1:
                node = int(blk.idx[0])
                fn = fns[blk.nl_fns[0]] if len(blk.nl_fns) == 1 else _sum_fns([fns[j] for j in blk.nl_fns])
                v[node] = _solve_scalar(blk.g_scalar, b[node], fn, v_prev[node], self.names[node], t)
                continue
            a = blk.ginv @ b[blk.idx]
            f_vals = self._solve_block(blk, a, v_prev[blk.idx], fns, t)
            v[blk.idx] = a - blk.rcols @ f_vals
        return v

    def _solve_block(self, blk, a, v_prev_local, fns, t):
        """Nonlinear pads inside a multi-node cluster; returns device currents."""
        nl = blk.nl_local
        a_n = a[nl]
        # Several devices on one node: merge them into a single one-port.
        uniq = sorted(set(nl))
        if len(uniq) != len(nl):
            raise NotImplementedError("several drivers on one node inside a cluster")
        group_fns = [fns[j] for j in blk.nl_fns]
        if len(nl) == 1:
            g = 1.0 / blk.m[0, 0]
            fn = group_fns[0]
            x = _solve_scalar(g, g * a_n[0], fn, v_prev_local[nl[0]], self.names[blk.idx[nl[0]]], t)
            return np.array([fn(x)[0]])
        minv = blk.minv
        x = v_prev_local[nl].astype(float).copy()

        def residual(x):
            vals = [f(xx) for f, xx in zip(group_fns, x)]
            fv = np.array([p[0] for p in vals])
            dv = np.array([p[1] for p in vals])
            return minv @ (x - a_n) + fv, fv, dv

        F, fv, dv = residual(x)
        for _ in range(MAX_ITER):
            if np.max(np.abs(F)) < CURRENT_TOL:
                return fv
            J = minv + np.diag(dv)
            step = np.linalg.solve(J, F)
            lam = 1.0
            norm0 = np.linalg.norm(F)
            for _ in range(12):
                xn = x - lam * step
                Fn, fvn, dvn = residual(xn)
                if np.linalg.norm(Fn) < norm0:
                    break
                lam *= 0.5
            else:
                # Newton stalled: fall back to nonlinear Gauss-Seidel sweeps.
                for j in range(len(x)):
                    gj = minv[j, j]
                    rest = minv[j] @ (x - a_n) - gj * (x[j] - a_n[j])
                    x[j] = _solve_scalar(gj, gj * a_n[j] - rest, group_fns[j], x[j],
                                         self.names[blk.idx[nl[j]]], t)
                F, fv, dv = residual(x)
                continue
            x, F, fv, dv = xn, Fn, fvn, dvn
        raise ConvergenceError(self.names[blk.idx[nl[0]]], t, float(np.max(np.abs(F))))


def _sum_fns(fs):
    def fn(v):
        i = di = 0.0
        for f in fs:
            a, b = f(v)
            i += a
            di += b
        return i, di

    return fn


def _driver_fn(model, corner, w_up):
    """Current drawn from the node by a driver at fixed weights."""
    data = model.corner(corner.tag)
    vddq = model.vddq * corner.voltage_scale
    s = corner.strength_scale
    pu, pd = data.pullup.value_and_slope, data.pulldown.value_and_slope
    w_dn = 1.0 - w_up

    def fn(v):
        iu, gu = pu(vddq - v)
        idn, gd = pd(v)
        return s * (w_dn * idn - w_up * iu), s * (w_dn * gd + w_up * gu)

    return fn


class _Compiled:
    def __init__(self, c: Circuit, dt: float):
        c.check()
        names = list(c.nodes)
        uf = _UnionFind(len(names))
        pos = {n: k for k, n in enumerate(names)}
        for r in c.resistors:
            if r.r == 0:
                uf.union(pos[r.a], pos[r.b])
        roots = sorted({uf.find(k) for k in range(len(names))})
        rmap = {r: k for k, r in enumerate(roots)}
        self.node_of = {n: rmap[uf.find(pos[n])] for n in names}
        self.names = [names[r] for r in roots]
        n = len(roots)
        self.n = n
        gnd = n  # virtual ground slot
        self.dt = dt

        def ix(name):
            return gnd if name is None else self.node_of[name]

        # Mode ends: node pair, voltage weights p, current weights q.
        ends = []  # dict rows
        self.quantized = {}
        self.effective_td = {}

        def quantize(name, td):
            k = max(1, int(round(td / dt)))
            eff = k * dt
            self.effective_td[name] = eff
            if abs(eff - td) > 1e-9 * td:
                self.quantized[name] = (td, eff)
            return k

        self.groups = []  # ("plain", ea, eb) or ("pair", even_a, even_b, odd_a, odd_b)
        for ln in c.lines:
            k = quantize(ln.name, ln.td)
            ia, ib = ix(ln.a), ix(ln.b)
            base = len(ends)
            self.groups.append(("plain", base, base + 1))
            ends.append(dict(n1=ia, n2=ia, p1=1.0, p2=0.0, q1=1.0, q2=0.0, z=ln.z0, d=k, partner=base + 1))
            ends.append(dict(n1=ib, n2=ib, p1=1.0, p2=0.0, q1=1.0, q2=0.0, z=ln.z0, d=k, partner=base))
        for cl in c.coupled:
            ke = quantize(cl.name + ".even", cl.td_even)
            ko = quantize(cl.name + ".odd", cl.td_odd)
            a1, b1, a2, b2 = ix(cl.a1), ix(cl.b1), ix(cl.a2), ix(cl.b2)
            base0 = len(ends)
            self.groups.append(("pair", base0, base0 + 1, base0 + 2, base0 + 3))
            for z, k, sgn in ((cl.z0_even, ke, 1.0), (cl.z0_odd, ko, -1.0)):
                base = len(ends)
                ends.append(dict(n1=a1, n2=a2, p1=0.5, p2=0.5 * sgn, q1=1.0, q2=sgn, z=z, d=k, partner=base + 1))
                ends.append(dict(n1=b1, n2=b2, p1=0.5, p2=0.5 * sgn, q1=1.0, q2=sgn, z=z, d=k, partner=base))
        if self.quantized:
            log.warning(
                "line delays quantized to dt=%.4e s: %s",
                dt,
                ", ".join(f"{k} {a:.4e}->{b:.4e}" for k, (a, b) in self.quantized.items()),
            )

        G = np.zeros((n + 1, n + 1))
        base_inj = np.zeros(n + 1)
        for e in ends:
            for ni, qi in ((e["n1"], e["q1"]), (e["n2"], e["q2"])):
                for nj, pj in ((e["n1"], e["p1"]), (e["n2"], e["p2"])):
                    if qi and pj:
                        G[ni, nj] += qi * pj / e["z"]
        for r in c.resistors:
            if r.r == 0:
                continue
            ia, ib = ix(r.a), ix(r.b)
            g = 1.0 / r.r
            G[ia, ia] += g
            if ib == gnd:
                base_inj[ia] += r.v * g
            else:
                G[ib, ib] += g
                G[ia, ib] -= g
                G[ib, ia] -= g
        self.cap_a = np.array([ix(cp.a) for cp in c.capacitors], dtype=int)
        self.cap_b = np.array([ix(cp.b) for cp in c.capacitors], dtype=int)
        self.cap_g = np.array([2.0 * cp.c / dt for cp in c.capacitors])
        for ia, ib, g in zip(self.cap_a, self.cap_b, self.cap_g):
            G[ia, ia] += g
            G[ib, ib] += g
            G[ia, ib] -= g
            G[ib, ia] -= g
        self.src_nodes = np.array([ix(s.node) for s in c.sources], dtype=int)
        self.src_g = np.array([1.0 / s.r for s in c.sources])
        for ia, g in zip(self.src_nodes, self.src_g):
            G[ia, ia] += g
        self.sources = c.sources
        self.G_full = G
        self.base_inj = base_inj[:n]

        self.e_n1 = np.array([e["n1"] for e in ends], dtype=int)
        self.e_n2 = np.array([e["n2"] for e in ends], dtype=int)
        self.e_p1 = np.array([e["p1"] for e in ends])
        self.e_p2 = np.array([e["p2"] for e in ends])
        self.e_q1 = np.array([e["q1"] for e in ends])
        self.e_q2 = np.array([e["q2"] for e in ends])
        self.e_z = np.array([e["z"] for e in ends])
        self.e_d = np.array([e["d"] for e in ends], dtype=int)
        self.e_partner = np.array([e["partner"] for e in ends], dtype=int)
        self.ends = ends

        # One bincount per step gathers line histories and capacitor histories.
        pair = self.e_q2 != 0
        self.inj_nodes = np.concatenate([self.e_n1, self.e_n2[pair], self.cap_a, self.cap_b])
        self.n_ends = len(ends)
        self.pair_mask = pair

        self.drivers = c.drivers
        self.drv_nodes = [ix(d.node) for d in c.drivers]
        for d, k in zip(c.drivers, self.drv_nodes):
            if k == gnd:
                raise ValueError("driver tied to ground")

    def dc_network(self):
        """Network for the operating point: lines shorted, capacitors open."""
        n = self.n
        uf = _UnionFind(n + 1)
        for e in self.ends:
            pe = self.ends[e["partner"]]
            uf.union(e["n1"], pe["n1"])
            uf.union(e["n2"], pe["n2"])
        roots = sorted({uf.find(k) for k in range(n + 1)})
        gnd_root = uf.find(n)
        rmap = {}
        for r in roots:
            if r != gnd_root:
                rmap[r] = len(rmap)
        m = len(rmap)
        proj = np.zeros((n + 1, m + 1))
        for k in range(n + 1):
            r = uf.find(k)
            proj[k, m if r == gnd_root else rmap[r]] = 1.0
        # Rebuild the lumped part of G (no line or capacitor stamps).
        G = np.zeros((n + 1, n + 1))
        G[:, :] = self.G_full
        for e in self.ends:
            for ni, qi in ((e["n1"], e["q1"]), (e["n2"], e["q2"])):
                for nj, pj in ((e["n1"], e["p1"]), (e["n2"], e["p2"])):
                    if qi and pj:
                        G[ni, nj] -= qi * pj / e["z"]
        for ia, ib, g in zip(self.cap_a, self.cap_b, self.cap_g):
            G[ia, ia] -= g
            G[ib, ib] -= g
            G[ia, ib] += g
            G[ib, ia] += g
        Gm = proj.T @ G @ proj
        return G, Gm[:m, :m], proj[:, :m], m


class _Sim:
    def __init__(self, c: Circuit, dt: float, t_stop: float):
        if dt <= 0 or t_stop < dt:
            raise ValueError("need dt > 0 and t_stop >= dt")
        self.c = c
        self.k = _Compiled(c, dt)
        self.nsteps = int(math.floor(t_stop / dt + 1e-9)) + 1
        self.times = np.arange(self.nsteps) * dt

    def run(self, initial: str = "dc") -> WaveformSet:
        k = self.k
        n = k.n
        nsteps = self.nsteps
        dt = k.dt
        times = self.times

        # Per-step source injections and driver weights.
        src_inj = np.zeros((nsteps, n + 1))
        src_init = np.zeros(n + 1)
        for s, ia, g in zip(k.sources, k.src_nodes, k.src_g):
            src_inj[:, ia] += pwl_eval(s.points, times) * g
            src_init[ia] += s.points[0][1] * g
        src_inj = src_inj[:, :n] + k.base_inj
        weights = []
        w_init = []
        for d in k.drivers:
            data = d.model.corner(d.corner.tag)
            rr = data.ramp_rise * d.corner.ramp_scale
            rf = data.ramp_fall * d.corner.ramp_scale
            weights.append(weight_trace(d.stimulus, rr, rf, times))
            w_init.append(float(d.stimulus.edges()[0]))

        net = _Network(k.G_full[:n, :n], list(k.drv_nodes), k.names)

        L = int(k.e_d.max()) + 1 if k.n_ends else 1
        ring = np.zeros((L, k.n_ends))
        cap_j = np.zeros(len(k.cap_g))
        v_full = np.zeros(n + 1)
        if initial == "dc":
            v_dc, emissions = self._dc_state(src_init, w_init)
            v_full[:n] = v_dc
            ring[:, :] = emissions
            cap_j = k.cap_g * (v_full[k.cap_a] - v_full[k.cap_b])
        elif initial != "zero":
            raise ValueError("initial must be 'dc' or 'zero'")

        out = np.empty((nsteps, n))
        e_n1, e_n2, e_p1, e_p2 = k.e_n1, k.e_n2, k.e_p1, k.e_p2
        two_over_z = 2.0 / k.e_z
        read_rows_base = -k.e_d
        partner = k.e_partner
        pair = k.pair_mask
        q2_pair = k.e_q2[pair]
        inj_nodes = k.inj_nodes
        cap_a, cap_b, cap_g = k.cap_a, k.cap_b, k.cap_g
        drivers = k.drivers
        n_drv = len(drivers)
        any_pair = bool(pair.any())
        minlen = n + 1

        for step in range(nsteps):
            rows = (step + read_rows_base) % L
            h_in = ring[rows, partner]
            if any_pair:
                w = np.concatenate([h_in, h_in[pair] * q2_pair, cap_j, -cap_j])
            else:
                w = np.concatenate([h_in, cap_j, -cap_j])
            b = np.bincount(inj_nodes, weights=w, minlength=minlen)[:n] + src_inj[step]
            if n_drv:
                fns = [
                    _driver_fn(d.model, d.corner, float(weights[j][step]))
                    for j, d in enumerate(drivers)
                ]
            else:
                fns = []
            v = net.solve(b, v_full, fns, times[step])
            v_full[:n] = v
            vm = e_p1 * v_full[e_n1] + e_p2 * v_full[e_n2]
            ring[step % L] = two_over_z * vm - h_in
            if len(cap_g):
                cap_j = 2.0 * cap_g * (v_full[cap_a] - v_full[cap_b]) - cap_j
            out[step] = v

        traces = {}
        for name, idx in k.node_of.items():
            traces[name] = out[:, idx]
        return WaveformSet(
            dt=dt,
            traces=traces,
            quantized=dict(k.quantized),
            effective_td=dict(k.effective_td),
        )

    def _dc_state(self, src_init, w_init):
        k = self.k
        n = k.n
        G, Gm, proj, m = k.dc_network()
        b_full = np.zeros(n + 1)
        b_full[:n] = k.base_inj
        b_full += src_init
        bm = (proj.T @ b_full)[:m]
        drv_m = [int(np.argmax(proj[i])) for i in k.drv_nodes]
        fns = [_driver_fn(d.model, d.corner, w) for d, w in zip(k.drivers, w_init)]
        netm = _Network(Gm, drv_m, [f"dc{j}" for j in range(m)])
        vm = netm.solve(bm, np.full(m, 0.0), fns, -math.inf)
        v = np.zeros(n + 1)
        v[:] = proj @ vm if m else 0.0
        v[n] = 0.0
        # Conductor currents: each line conductor carries whatever KCL leaves over.
        i_elem = G @ v - b_full
        for fn, node in zip(fns, k.drv_nodes):
            i_elem[node] += fn(v[node])[0]
        # (from_node, to_node) per conductor, in group order.
        cond = []
        for g in k.groups:
            ea, eb = k.ends[g[1]], k.ends[g[2]]
            cond.append((ea["n1"], eb["n1"]))
            if g[0] == "pair":
                cond.append((ea["n2"], eb["n2"]))
        emissions = np.zeros(k.n_ends)
        if cond:
            A = np.zeros((n, len(cond)))
            for j, (a, b) in enumerate(cond):
                if a < n:
                    A[a, j] += 1.0
                if b < n:
                    A[b, j] -= 1.0
            # Solve per connected piece so unrelated subcircuits cannot
            # perturb each other's rounding.
            cur = np.zeros(len(cond))
            uf = _UnionFind(n + 1)
            for a, b in cond:
                uf.union(a, b)
            pieces: dict[int, list[int]] = {}
            for j, (a, _) in enumerate(cond):
                pieces.setdefault(uf.find(a), []).append(j)
            for cols in pieces.values():
                rows = sorted({x for j in cols for x in cond[j] if x < n})
                sol, *_ = np.linalg.lstsq(A[np.ix_(rows, cols)], -i_elem[rows], rcond=None)
                cur[cols] = sol
            j = 0
            for g in k.groups:
                if g[0] == "plain":
                    mode_currents = [(g[1], g[2], cur[j])]
                    j += 1
                else:
                    i1, i2 = cur[j], cur[j + 1]
                    mode_currents = [(g[1], g[2], 0.5 * (i1 + i2)), (g[3], g[4], 0.5 * (i1 - i2))]
                    j += 2
                for ea, eb, im in mode_currents:
                    for end, i_into in ((ea, im), (eb, -im)):
                        ee = k.ends[end]
                        vmode = ee["p1"] * v[ee["n1"]] + ee["p2"] * v[ee["n2"]]
                        # Steady wave launched from this end: V/Z + I.
                        emissions[end] = vmode / ee["z"] + i_into
        return v[:n], emissions


def simulate(c: Circuit, dt: float, t_stop: float, initial: str = "dc") -> WaveformSet:
    """Transient simulation of ``c`` from 0 to ``t_stop`` with step ``dt``.

    ``initial="dc"`` starts from the operating point with every stimulus at
    its resting level; ``"zero"`` starts from a fully discharged network.
    Line delays are rounded to the nearest multiple of ``dt`` (at least one
    step); rounded lines are logged and listed in ``WaveformSet.quantized``.
    """
    return _Sim(c, dt, t_stop).run(initial)


simulate_coupled = simulate
