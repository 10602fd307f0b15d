"""``posedec`` command line.

Exit status: 0 on success, 1 when validation fails (bad flags or config,
failing checks), 2 on I/O or file-format errors. Errors print one line,
``posedec: error: <kind>: <reason>``, to stderr.
"""
import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from posedec import gradcheck
from posedec.config import load_config
from posedec.decoder import decode, from_coco_result, to_coco_results
from posedec.scoring import ScoreNet, greedy_match, oks_matrix, rank_poses, scorenet_train
from posedec.synth import make_score_dataset, parallel_map, sample_scene
from posedec.targets import build_targets, dump_poses, load_poses
from posedec.tensor import TensorFormatError, read_tensor, write_tensor


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _write_json(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def _scene_dirs(root):
    dirs = sorted(p for p in Path(root).iterdir() if p.is_dir() and p.name.startswith("scene_"))
    if not dirs:
        raise FileNotFoundError(f"no scene_* directories in {root}")
    return dirs


def _scene_id(path):
    return int(Path(path).name.split("_", 1)[1])


def _write_scene(args):
    spec, cfg, index, out = args
    poses, maps = sample_scene(spec, cfg, index)
    d = Path(out) / f"scene_{index:04d}"
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(maps.kp_heatmaps, d / "heatmaps.pdt")
    write_tensor(maps.center_heatmap, d / "center.pdt")
    write_tensor(maps.offset_maps, d / "offsets.pdt")
    dump_poses(poses, d / "poses.json")
    return len(poses)


def cmd_synth(args, cfg):
    spec = cfg.synth
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    work = [(spec, cfg.skeleton, i, args.out) for i in range(args.n_scenes)]
    counts = parallel_map(_write_scene, work, args.jobs)
    _write_json({"scenes": len(counts), "persons": int(sum(counts))}, None)
    return 0


def cmd_gen_targets(args, cfg):
    poses = load_poses(args.poses)
    t = build_targets(poses, cfg.skeleton, args.height, args.width)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(t.kp_heatmaps, out / "heatmaps.pdt")
    write_tensor(t.center_heatmap, out / "center.pdt")
    write_tensor(t.offset_maps, out / "offsets.pdt")
    write_tensor(t.loss_mask, out / "mask.pdt")
    write_tensor(t.offset_valid, out / "offset_valid.pdt")
    write_tensor(t.instance_size, out / "instance_size.pdt")
    _write_json({"poses": len(poses), "shape": [int(v) for v in t.kp_heatmaps.shape]}, None)
    return 0


def _decode_one(args):
    heat_path, center_path, offsets_path, image_id, dcfg, skel, net = args
    heat = read_tensor(heat_path)
    center = read_tensor(center_path)
    offsets = read_tensor(offsets_path)
    if heat.shape[0] != skel.num_keypoints or offsets.shape[0] != 2 * heat.shape[0]:
        raise ValidationError(
            f"channel counts {heat.shape[0]}/{offsets.shape[0]} do not match K={skel.num_keypoints}"
        )
    poses = rank_poses(decode(heat, center, offsets, dcfg), net, skel)
    return to_coco_results(poses, image_id, dcfg.output_stride)


def cmd_decode(args, cfg):
    net = ScoreNet.load(args.net) if args.net else None
    if args.scenes:
        work = [
            (d / "heatmaps.pdt", d / "center.pdt", d / "offsets.pdt", _scene_id(d), cfg.decode, cfg.skeleton, net)
            for d in _scene_dirs(args.scenes)
        ]
    else:
        if not (args.heatmaps and args.center and args.offsets):
            raise ValidationError("decode needs --scenes or all of --heatmaps/--center/--offsets")
        work = [(args.heatmaps, args.center, args.offsets, args.image_id, cfg.decode, cfg.skeleton, net)]
    results = [r for rs in parallel_map(_decode_one, work, args.jobs) for r in rs]
    _write_json(results, args.out)
    return 0


def _by_image(results):
    groups = {}
    for r in results:
        groups.setdefault(int(r["image_id"]), []).append(r)
    return groups


def cmd_score(args, cfg):
    stride = cfg.decode.output_stride
    if args.net:
        net = ScoreNet.load(args.net)
    elif args.train:
        sc = cfg.score
        spec = replace(
            cfg.synth,
            noise_sigma=sc.noise_sigma,
            offset_noise_sigma=sc.offset_noise_sigma,
            seed=cfg.synth.seed if args.seed is None else args.seed,
        )
        examples = make_score_dataset(spec, sc.train_scenes, cfg.skeleton, cfg.decode, jobs=args.jobs)
        net, history = scorenet_train(
            examples, sc.lr, sc.epochs, sc.batch_size, seed=spec.seed, hidden=sc.hidden
        )
        if args.save_net:
            net.save(args.save_net)
        print(f"trained on {len(examples)} poses, final mse {history[-1]:.6g}", file=sys.stderr)
    else:
        net = None

    ranked = []
    for image_id, rs in sorted(_by_image(_read_json(args.results)).items()):
        poses = [from_coco_result(r, stride) for r in rs]
        ranked.extend(to_coco_results(rank_poses(poses, net, cfg.skeleton), image_id, stride))
    _write_json(ranked, args.out)
    return 0


def evaluate_oks(results, gts_by_image, skel, stride):
    """Greedy one-to-one OKS matching per image; mean OKS is over groundtruth
    persons, with unmatched ones counting 0."""
    rows = []
    n_pred = 0
    unmatched_pred = 0
    preds_by_image = _by_image(results)
    for image_id in sorted(gts_by_image):
        gts = [g for g in gts_by_image[image_id] if g.labeled.any()]
        preds = [from_coco_result(r, stride).keypoints for r in preds_by_image.get(image_id, [])]
        n_pred += len(preds)
        sim = oks_matrix(preds, gts, skel)
        match = greedy_match(sim.T)  # one row per groundtruth
        unmatched_pred += len(preds) - int(np.sum(match >= 0))
        for g_idx, p_idx in enumerate(match):
            value = float(sim[p_idx, g_idx]) if p_idx >= 0 else 0.0
            rows.append({"image_id": image_id, "gt": g_idx, "pred": int(p_idx), "oks": round(value, 6)})
    mean = float(np.mean([r["oks"] for r in rows])) if rows else 0.0
    return {
        "per_pose": rows,
        "mean_oks": round(mean, 6),
        "n_gt": len(rows),
        "n_pred": n_pred,
        "unmatched_pred": unmatched_pred,
    }


def cmd_eval_oks(args, cfg):
    if args.scenes:
        gts = {_scene_id(d): load_poses(d / "poses.json") for d in _scene_dirs(args.scenes)}
    elif args.gt:
        gts = {args.image_id: load_poses(args.gt)}
    else:
        raise ValidationError("eval-oks needs --scenes or --gt")
    report = evaluate_oks(_read_json(args.results), gts, cfg.skeleton, cfg.decode.output_stride)
    print(f"{'image':>6} {'gt':>4} {'pred':>5} {'oks':>9}")
    for r in report["per_pose"]:
        print(f"{r['image_id']:>6} {r['gt']:>4} {r['pred']:>5} {r['oks']:>9.6f}")
    print(f"mean OKS {report['mean_oks']:.6f} over {report['n_gt']} persons")
    if args.out:
        _write_json(report, args.out)
    return 0


def cmd_gradcheck(args, cfg):
    seed = 0 if args.seed is None else args.seed
    report, passed = gradcheck.run_suites(args.instances, seed)
    for suite, checks in report.items():
        for name, err in checks.items():
            print(f"{'ok' if err < gradcheck.TOLERANCE else 'FAIL':4} {suite}/{name} max_rel_err={err:.3e}")
    n_pass = sum(passed.values())
    status = "PASS" if n_pass == len(passed) else "FAIL"
    print(f"{status} {n_pass}/{len(passed)} suites")
    if args.out:
        _write_json({"suites": report, "passed": passed}, args.out)
    return 0 if status == "PASS" else 1


def cmd_config(args, cfg):
    _write_json(cfg.to_dict(), None)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (falls back to $POSEDEC_CONFIG)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1)

    parser = _Parser(prog="posedec", description="Bottom-up pose decoding toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("config", parents=[common], help="print the effective configuration")
    p.add_argument("--dump", action="store_true")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", parents=[common], help="write synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--n-scenes", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-targets", parents=[common], help="build target maps from pose JSON")
    p.add_argument("--poses", required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_targets)

    p = sub.add_parser("decode", parents=[common], help="decode map tensors into COCO results")
    p.add_argument("--scenes", help="directory of scene_* folders")
    p.add_argument("--heatmaps")
    p.add_argument("--center")
    p.add_argument("--offsets")
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--net", help="ScoreNet JSON used for scores (naive score otherwise)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", parents=[common], help="rescore and rank COCO results")
    p.add_argument("--results", required=True)
    p.add_argument("--net", help="load a trained ScoreNet")
    p.add_argument("--train", action="store_true", help="train a ScoreNet on synthetic scenes")
    p.add_argument("--save-net")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval-oks", parents=[common], help="OKS of results against groundtruth")
    p.add_argument("--results", required=True)
    p.add_argument("--scenes")
    p.add_argument("--gt")
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_oks)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _fail(kind, exc, code):
    reason = " ".join(str(exc).split()) or type(exc).__name__
    print(f"posedec: error: {kind}: {reason}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ValidationError, ValueError) as exc:
        if isinstance(exc, (TensorFormatError, json.JSONDecodeError)):
            return _fail("format", exc, 2)
        return _fail("validation", exc, 1)
    except OSError as exc:
        return _fail("io", exc, 2)
    except (KeyError, TypeError) as exc:
        return _fail("format", exc, 2)


if __name__ == "__main__":
    sys.exit(main())
