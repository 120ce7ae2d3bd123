"""Command-line surface tying the pipeline together.

Subcommands: simulate, train, train-dg, eval, infer, classify, track,
plot.  Exit code 0 on success, 2 on usage errors, 1 otherwise with a
single machine-parseable diagnostic line on stderr.
"""

import argparse
import sys

import numpy as np

from . import apps, dataio, metrics as mt, simulator as sim, training
from .network import stacked_batch


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wifihand",
        description="hand mask/pose reconstruction from (synthetic) WiFi CSI",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--domains", type=int, default=1)
    p.add_argument("--gestures", type=int, default=0,
                   help="number of gesture classes to cycle (0 = freeform)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    for name in ("train", "train-dg"):
        p = sub.add_parser(name, help=f"{name} on a dataset")
        p.add_argument("--config", help="run config file (key = value)")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--log")
        p.add_argument("--seed", type=int)
        if name == "train-dg":
            p.add_argument("--holdout", type=int,
                           help="domain id excluded from training")

    p = sub.add_parser("eval", help="metric report for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = sub.add_parser("infer", help="run one sample through the model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)

    p = sub.add_parser("classify", help="train/evaluate the gesture head")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--tap", choices=apps.HEAD_TAPS, default="latent")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("track", help="index-finger track over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--smooth", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", help="render a sample or a track to a figure")
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--track")
    p.add_argument("--out", required=True)
    return parser


def _load_train_config(args):
    d = dataio.read_config(args.config) if args.config else {}
    cfg = training.train_config_from_dict(d)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_simulate(args):
    domains = sim.default_domains(args.domains)
    gesture_set = list(range(args.gestures)) if args.gestures else None
    samples = sim.generate_samples(args.n, domains, args.seed,
                                   gesture_set=gesture_set)
    dataset = dataio.Dataset(samples=samples, domains=domains,
                             gesture_ids=gesture_set or [])
    dataio.write_dataset(args.out, dataset)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_train(args, dg=False):
    dataset = dataio.read_dataset(args.data)
    cfg = _load_train_config(args)
    if dg:
        if args.holdout is not None:
            kept = [s for s in dataset.samples if s.domain_id != args.holdout]
            dataset = dataio.Dataset(
                samples=kept, cm_per_unit=dataset.cm_per_unit,
                domains=[d for d in dataset.domains
                         if d.domain_id != args.holdout],
                gesture_ids=dataset.gesture_ids,
            )
        result = training.train_dg(dataset, cfg, out_path=args.out,
                                   log_path=args.log)
    else:
        result = training.train(dataset, cfg, out_path=args.out,
                                log_path=args.log)
    final = result.log[-1]
    print(f"trained {cfg.epochs} epochs, final total loss {final['total']:.6g}")
    return 0


def _cmd_eval(args):
    model, _ = dataio.load_model(args.model)
    dataset = dataio.read_dataset(args.data)
    values = training.evaluate(model, dataset)
    n = len(dataset)
    report = mt.metric_report({k: (v, n) for k, v in values.items()})
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report)
    print(report, end="")
    return 0


def _cmd_infer(args):
    from .network import infer

    model, _ = dataio.load_model(args.model)
    dataset = dataio.read_dataset(args.data)
    sample = dataset.samples[args.index]
    mask_prob, pose, _ = infer(model, sample.csi)
    if mask_prob is not None:
        occ = float((mask_prob >= 0.5).mean())
        print(f"mask_occupancy {occ:.6f}")
    for i, (x, y, z) in enumerate(pose):
        print(f"joint {i} {x:.6f} {y:.6f} {z:.6f}")
    return 0


def _cmd_classify(args):
    model, _ = dataio.load_model(args.model)
    dataset = dataio.read_dataset(args.data)
    labeled = [s for s in dataset.samples if s.gesture_id >= 0]
    if not labeled:
        raise ValueError("dataset has no gesture labels")
    rng = np.random.default_rng(args.seed)
    idx = rng.permutation(len(labeled))
    n_train = int(round(args.train_frac * len(labeled)))
    train_set = [labeled[i] for i in idx[:n_train]]
    test_set = [labeled[i] for i in idx[n_train:]] or train_set
    head = apps.train_gesture_head(model, train_set, args.classes,
                                   tap=args.tap, seed=args.seed)
    acc = apps.classification_accuracy(model, head, test_set)
    print(f"accuracy {acc:.6f} {len(test_set)}")
    return 0


def _cmd_track(args):
    model, _ = dataio.load_model(args.model)
    dataset = dataio.read_dataset(args.data)
    track = apps.track_finger(model, (s.csi for s in dataset.samples),
                              smooth_window=args.smooth)
    apps.export_track(args.out, track)
    print(f"wrote {len(track)} track points to {args.out}")
    return 0


def _cmd_plot(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if args.track:
        pts = np.loadtxt(args.track, comments="#", usecols=(1, 2, 3))
        fig = plt.figure(figsize=(8, 4))
        ax = fig.add_subplot(1, 2, 1)
        ax.plot(pts[:, 0], pts[:, 1], "-o", markersize=2)
        ax.set_title("fingertip, top view")
        ax.set_aspect("equal")
        ax3 = fig.add_subplot(1, 2, 2, projection="3d")
        ax3.plot(pts[:, 0], pts[:, 1], pts[:, 2])
        ax3.set_title("fingertip, 3D")
    elif args.data:
        dataset = dataio.read_dataset(args.data)
        sample = dataset.samples[args.index]
        fig = plt.figure(figsize=(8, 4))
        ax = fig.add_subplot(1, 2, 1)
        ax.imshow(sample.mask, origin="lower", cmap="gray")
        ax.set_title("hand mask")
        ax3 = fig.add_subplot(1, 2, 2, projection="3d")
        from .hand_model import default_topology
        topo = default_topology()
        for p, c in topo.bone_order:
            seg = sample.pose[[p, c]]
            ax3.plot(seg[:, 0], seg[:, 1], seg[:, 2], "b-")
        ax3.scatter(*sample.pose.T, s=8, c="r")
        ax3.set_title("hand pose")
    else:
        raise ValueError("plot needs --data or --track")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote figure to {args.out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "train-dg": lambda a: _cmd_train(a, dg=True),
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "classify": _cmd_classify,
    "track": _cmd_track,
    "plot": _cmd_plot,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # single-line machine-parseable diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
