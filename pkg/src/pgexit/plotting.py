"""PNG figures rendered next to the CSV outputs (Agg backend, no display)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.8, 3.2),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_convergence(clog, path, reference_bp=None, label="policy"):
    """MC price (bp) against training episodes, with a 2-se band."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ep = clog.episodes
        m = 1e4 * clog.prices
        se = 1e4 * clog.std_errors
        ax.plot(ep, m, lw=1.2, label=label)
        ax.fill_between(ep, m - 2 * se, m + 2 * se, alpha=0.25, lw=0)
        if reference_bp is not None:
            ax.axhline(reference_bp, color="k", ls="--", lw=0.8, label="HJB")
        ax.set_xlabel("episodes")
        ax.set_ylabel(r"price $\times 10^4$")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_surface(rows, path, title=None):
    """Heat map of prob(a_max) over (V, Q) from policy_surface rows."""
    a = np.asarray(rows, dtype=float)
    vs = np.unique(a[:, 0])
    qs = np.unique(a[:, 1])
    z = a[:, 2].reshape(len(vs), len(qs))
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        im = ax.pcolormesh(qs, vs, z, vmin=0.0, vmax=1.0, cmap="viridis", shading="nearest")
        ax.set_xlabel("Q")
        ax.set_ylabel("V")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, label=r"prob($\bar a$)")
        return _save(fig, path)


def plot_paths(rows, path):
    """S, V (left axis) and Q (right axis) for each sampled path."""
    a = np.asarray(rows, dtype=float)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        axq = ax.twinx()
        axq.spines["right"].set_visible(True)
        for k in np.unique(a[:, 0]):
            p = a[a[:, 0] == k]
            line, = ax.plot(p[:, 1], p[:, 2], lw=1.0, label=f"S, path {int(k)}")
            ax.plot(p[:, 1], p[:, 3], lw=1.0, ls="--", color=line.get_color())
            axq.step(p[:, 1], p[:, 4], where="post", lw=0.8, color=line.get_color(), alpha=0.6)
        ax.set_xlabel("t (years)")
        ax.set_ylabel("S (solid), V (dashed)")
        axq.set_ylabel("Q")
        ax.legend(frameon=False, loc="upper left")
        return _save(fig, path)


def plot_value_slice(sol, path):
    """Time-0 HJB value (bp) against V at s = S0 for a few inventories."""
    g = sol.grid0
    j = int(np.argmin(np.abs(np.log(g.s_nodes / sol.cfg.s0))))
    picks = np.unique(np.linspace(0, len(g.q_nodes) - 2, 4).astype(int))
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for k in picks:
            ax.plot(g.v_nodes, 1e4 * g.values[j, :, k], lw=1.0, label=f"Q = {g.q_nodes[k]:.2f}")
        ax.set_xlabel("V")
        ax.set_ylabel(r"$P(0, S_0, V, Q) \times 10^4$")
        ax.legend(frameon=False)
        return _save(fig, path)
