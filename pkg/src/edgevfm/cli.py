"""Command-line entry point.

Every data-emitting command takes ``--format {json,csv}`` (default json) and
writes only its payload to stdout; diagnostics go to stderr. Exit codes: 0
success, 1 validation or protocol errors (including bad flags), 2 I/O or
transport errors.

File formats
  search space   JSON {input_resolution, width_step, depth_step, blocks:[{name, kind,
                 dim_min, dim_max, depth_min, depth_max, stride}]}
  subnet         JSON {depths:[4], dims:[4]}, a canonical id (d3-3-9-3_c48-96-192-384)
                 or a representative name (Min, Tiny, Small, Base, Large)
  calibration    CSV subnet_id,latency_ms,energy_mj
  profile        CSV scene,subnet_id,accuracy (fractions, or percent if any value > 1)
  timeline       JSON {frame_period_ms, segments:[{scene, frames}]}
  taxonomy       JSON {nodes:[...], edges:[[child, parent]], anchors:{class: node}}
  grouping       JSON {groups:[{name, members:[...]}], residual:[...]}
  embedding bank binary: "AVFMEMB1", u32 count, u32 dim (LE), count*dim f32 (LE),
                 then a UTF-8 JSON array of labels
  segmentation   binary PGM (P5), maxval = class count, plus <file>.json {labels}
  agent config   JSON {endpoint_url, model_name, timeout_ms, max_retries[, api_key_env]}
                 or a mock table {scenes:{name:{annotation, kept:[...]}}}
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import agent_protocol as ap
from . import cost_model as cm
from . import embedding_engine as ee
from . import search_space as ss
from . import selector as sel
from . import sim_runtime as sim
from . import supernet_toy as toy
from . import taxonomy as tx
from .exceptions import ProtocolError, TransportError, ValidationError

log = logging.getLogger("edgevfm")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _records_csv(records: list[dict]) -> str:
    if not records:
        return ""
    header = list(records[0])
    rows = [
        [json.dumps(r[h]) if isinstance(r[h], (list, dict)) else r[h] for h in header]
        for r in records
    ]
    return _csv(rows, header)


def _emit(args, payload, csv_text: str | None = None) -> None:
    if args.format == "csv":
        if csv_text is None:
            records = payload if isinstance(payload, list) else [payload]
            csv_text = _records_csv(records)
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None


def _space(args) -> ss.SearchSpace:
    return ss.load_space(args.space) if getattr(args, "space", None) else ss.default_space()


def _subnet(ref: str) -> ss.SubnetConfig:
    if Path(ref).is_file():
        return ss.load_subnet(ref)
    return ss.resolve_subnet(ref)


def _calibration(args, space) -> cm.CalibrationTable | None:
    path = getattr(args, "calib", None)
    return cm.load_calibration(path, space) if path else None


def _alphas(text: str) -> list[float]:
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse alpha list {text!r}") from None


def _candidates(args) -> tuple[ss.SubnetConfig, ...]:
    if getattr(args, "candidates", None):
        return tuple(_subnet(c.strip()) for c in args.candidates.split(",") if c.strip())
    return tuple(ss.representative_subnets().values())


def _names_list(path: str) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        names = json.loads(text)
    else:
        names = [line.strip() for line in text.splitlines() if line.strip()]
    if not all(isinstance(n, str) for n in names):
        raise ValidationError(f"{path}: class list must contain strings")
    return names


# --- space / cost -----------------------------------------------------------


def cmd_space(args) -> None:
    if args.action == "representative":
        records = [
            {"name": name, **rec}
            for name, rec in zip(
                ss.REPRESENTATIVE_NAMES,
                ss.configs_to_records(ss.representative_subnets().values()),
            )
        ]
    else:
        configs = ss.enumerate_space(_space(args), cap=args.cap)
        if args.limit is not None:
            configs = configs[: args.limit]
        records = ss.configs_to_records(configs)
    _emit(args, records)


def cmd_cost(args) -> None:
    space = _space(args)
    rep = cm.report(space, _subnet(args.subnet), args.resolution, _calibration(args, space), args.projector_dim)
    if args.format == "csv":
        sys.stdout.write(rep.to_csv_row(header=True))
    else:
        _emit(args, json.loads(rep.to_json()))


# --- selection / simulation ---------------------------------------------------


def cmd_select(args) -> None:
    space = _space(args)
    profile = sel.load_profile(args.profile)
    costs = sel.CostCache(space, _calibration(args, space))
    candidates = _candidates(args)
    if args.action == "sweep":
        scenes = [s.strip() for s in args.scenes.split(",")] if args.scenes else None
        table = sel.sweep_alpha(profile, scenes, _alphas(args.alphas), args.metric, candidates, costs)
        _emit(args, table.to_dict(), table.to_csv())
        return
    if args.scene is None or args.alpha is None:
        raise ValidationError("select needs --scene and --alpha")
    bank = ee.load_bank(args.scene_bank) if args.scene_bank else None
    result = sel.select_subnet(
        profile, sel.SelectionRequest(args.scene, args.alpha, args.metric, candidates), costs, bank
    )
    _emit(args, result.to_dict())


def _sim_config(args, alpha: float) -> sim.SimConfig:
    return sim.SimConfig(
        alpha=alpha,
        agent_cadence_s=args.cadence,
        switch_latency_ms=args.switch_latency,
        switch_energy_mj=args.switch_energy,
        cost_metric=args.metric,
        deadline_ms=args.deadline,
        candidates=_candidates(args),
    )


def cmd_simulate(args) -> None:
    space = _space(args)
    timeline = sim.load_timeline(args.timeline)
    profile = sel.load_profile(args.profile)
    calibration = cm.load_calibration(args.calib, space)
    if args.action == "curve":
        alphas = _alphas(args.alphas)
        points = sim.tradeoff_curve(timeline, profile, calibration, space, alphas, _sim_config(args, alphas[-1]))
        payload = [
            {
                "alpha": p.alpha,
                "avg_cost": p.avg_cost,
                "avg_flops": p.avg_flops,
                "avg_latency_ms": p.avg_latency_ms,
                "avg_energy_mj": p.avg_energy_mj,
                "avg_accuracy": p.avg_accuracy,
            }
            for p in points
        ]
        _emit(args, payload, sim.curve_to_csv(points))
        return
    if args.alpha is None:
        raise ValidationError("simulate needs --alpha")
    rep = sim.run_sim(timeline, profile, calibration, space, _sim_config(args, args.alpha))
    doc = rep.to_dict()
    if args.format == "csv":
        rows = [[getattr(r, f) for f in sim.SegmentRow.__dataclass_fields__] for r in rep.per_segment]
        _emit(args, doc, _csv(rows, list(sim.SegmentRow.__dataclass_fields__)))
    else:
        _emit(args, doc)


# --- taxonomy ---------------------------------------------------------------


def cmd_group(args) -> None:
    graph = tx.load_taxonomy(args.taxonomy)
    classes = _names_list(args.classes) if args.classes else sorted(graph.class_anchor)
    grouping = tx.group_superclasses(graph, classes, args.pmin, args.pmax)
    doc = grouping.to_dict()
    rows = [[i, name, ";".join(members)] for i, (name, members) in enumerate(grouping.groups)]
    rows += [[grouping.ignore_index, "", ";".join(grouping.residual)]] if grouping.residual else []
    _emit(args, doc, _csv(rows, ["group_index", "name", "members"]))


def cmd_remap(args) -> None:
    grouping = tx.load_grouping(args.grouping)
    labels = _read_json(args.map)
    classes = _names_list(args.classes) if args.classes else None
    out = tx.remap_labels(grouping, labels, classes)
    _emit(args, {"labels": out.tolist(), "ignore_index": grouping.ignore_index},
          _csv(np.atleast_2d(out).tolist(), [f"c{i}" for i in range(np.atleast_2d(out).shape[1])]))


# --- agent -------------------------------------------------------------------


def cmd_agent(args) -> None:
    if args.action == "render":
        names = _names_list(args.classes) if args.classes else None
        sys.stdout.write(ap.render_prompt(args.variant, args.scene, names, args.k) + "\n")
    elif args.action == "parse":
        names = _names_list(args.classes)
        raw = sys.stdin.read() if args.response in (None, "-") else Path(args.response).read_text(encoding="utf-8")
        resp = ap.parse_filter_response(raw, names, args.variant, args.k)
        _emit(args, {"verdicts": resp.as_dict(), "kept": sorted(resp.kept)},
              _csv([[n, v] for n, v in resp.verdicts], ["class", "verdict"]))
    elif args.action == "score":
        responses = _read_json(args.responses)
        truth = _read_json(args.truth)
        kept = [[n for n, v in r.items() if v == 1] if isinstance(r, dict) else r for r in responses]
        score = ap.score_filter(kept, truth)
        rows = [[i, r, p] for i, (r, p) in enumerate(score.per_sample)]
        rows.append(["mean", score.recall, score.precision])
        _emit(args, score.to_dict(), _csv(rows, ["sample", "recall", "precision"]))
    else:
        client = ap.load_client(args.config)
        if args.variant == ap.Variant.SCENE_ANNOTATION.value:
            prompt = ap.render_prompt(args.variant)
            raw = client.request(prompt, scene_hint=args.scene)
            _emit(args, {"annotation": ap.parse_scene_annotation(raw).phrase})
            return
        names = _names_list(args.classes)
        prompt = ap.render_prompt(args.variant, args.scene, names, args.k)
        raw = client.request(prompt, scene_hint=args.scene)
        resp = ap.parse_filter_response(raw, names, args.variant, args.k)
        _emit(args, {"verdicts": resp.as_dict(), "kept": sorted(resp.kept)},
              _csv([[n, v] for n, v in resp.verdicts], ["class", "verdict"]))


# --- inference / evaluation --------------------------------------------------


def _load_array(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path, allow_pickle=False)
    return np.asarray(_read_json(path), dtype=np.float64)


def cmd_infer(args) -> None:
    bank = ee.load_bank(args.bank)
    data = _load_array(args.input)
    if args.action == "classify":
        queries = np.atleast_2d(data)
        payload = [
            [{"label": label, "similarity": sim_} for label, sim_ in ee.classify(q, bank, args.top_k)]
            for q in queries
        ]
        rows = [[i, r, e["label"], e["similarity"]] for i, ranks in enumerate(payload) for r, e in enumerate(ranks)]
        _emit(args, payload, _csv(rows, ["sample", "rank", "label", "similarity"]))
        return
    size = None
    if args.out_size:
        h, w = args.out_size.lower().split("x")
        size = (int(h), int(w))
    seg = ee.segment(data, bank, size)
    if args.out:
        ee.write_pgm(seg, args.out, len(bank))
    _emit(args, {"height": seg.height, "width": seg.width, "labels": list(seg.labels),
                 "class_indices": seg.class_indices.tolist()},
          _csv(seg.class_indices.tolist(), [f"x{i}" for i in range(seg.width)]))


def cmd_eval(args) -> None:
    if args.action == "miou":
        pred, gt = ee.read_pgm(args.pred), ee.read_pgm(args.gt)
        n = args.num_classes or max(len(gt.labels), len(pred.labels))
        if not n:
            raise ValidationError("pass --num-classes when maps lack label sidecars")
        ious = ee.per_class_iou(pred, gt, n)
        value = ee.miou(pred, gt, n)
        doc = {"miou": value, "per_class_iou": [None if np.isnan(v) else float(v) for v in ious]}
        _emit(args, doc, _csv([["miou", value]], ["metric", "value"]))
    else:
        preds, gts = _read_json(args.pred), _read_json(args.gt)
        value = ee.acc_at_1(preds, gts)
        _emit(args, {"acc_at_1": value}, _csv([["acc_at_1", value]], ["metric", "value"]))


def cmd_train_toy(args) -> None:
    store, trace = toy.train_toy(args.steps, args.seed, args.plan_size, args.samples, args.lr)
    if args.checkpoint:
        toy.save_checkpoint(store, args.checkpoint)
    if args.format == "json":
        _emit(args, {"step": list(trace.steps), "min_loss": list(trace.min_loss),
                     "max_loss": list(trace.max_loss), "mean_loss": list(trace.mean_loss)})
    else:
        sys.stdout.write(trace.to_csv())


# --- parser -----------------------------------------------------------------


def _fmt(p, default="json"):
    p.add_argument("--format", choices=("json", "csv"), default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="edgevfm",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("space", help="enumerate the search space or list representative subnets")
    p.add_argument("action", choices=("enumerate", "representative"))
    p.add_argument("--space", help="search-space JSON (default: bundled space)")
    p.add_argument("--limit", type=int)
    p.add_argument("--cap", type=int, default=ss.DEFAULT_ENUMERATION_CAP)
    _fmt(p)
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("cost", help="parameter/FLOP counts and calibrated latency/energy")
    p.add_argument("--space")
    p.add_argument("--subnet", required=True, help="subnet JSON, canonical id or representative name")
    p.add_argument("--resolution", type=int)
    p.add_argument("--calib", help="calibration CSV")
    p.add_argument("--projector-dim", type=int)
    _fmt(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("select", help="scene-aware subnet selection; 'select sweep' for the alpha sweep")
    p.add_argument("action", nargs="?", choices=("run", "sweep"), default="run")
    p.add_argument("--profile", required=True)
    p.add_argument("--scene")
    p.add_argument("--scenes", help="comma-separated scenes for sweep (default: all)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--alphas", default="0.9,0.95,0.98,1.0")
    p.add_argument("--metric", choices=sel.COST_METRICS, default="flops")
    p.add_argument("--candidates", help="comma-separated subnet ids or names")
    p.add_argument("--scene-bank", help="embedding bank for nearest-scene lookup")
    p.add_argument("--space")
    p.add_argument("--calib")
    _fmt(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="edge/cloud loop simulation; 'simulate curve' for the trade-off curve")
    p.add_argument("action", nargs="?", choices=("run", "curve"), default="run")
    p.add_argument("--timeline", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alphas", default="0.8,0.85,0.88,0.9,0.92,0.94,0.96,0.98,1.0")
    p.add_argument("--metric", choices=sel.COST_METRICS, default="flops")
    p.add_argument("--cadence", type=float, default=300.0, help="seconds between agent calls")
    p.add_argument("--switch-latency", type=float, default=0.0)
    p.add_argument("--switch-energy", type=float, default=0.0)
    p.add_argument("--deadline", type=float, default=1000.0, help="per-frame latency budget (ms)")
    p.add_argument("--candidates")
    p.add_argument("--space")
    _fmt(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("group", help="super-class grouping over a taxonomy")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--classes", help="class list (JSON array or one per line); default: all anchored")
    p.add_argument("--pmin", type=float, default=0.05)
    p.add_argument("--pmax", type=float, default=0.40)
    _fmt(p)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("remap", help="remap labels to super-class indices")
    p.add_argument("--grouping", required=True)
    p.add_argument("--map", required=True, help="JSON (nested) list of class names or indices")
    p.add_argument("--classes", help="class list when --map holds indices")
    _fmt(p)
    p.set_defaults(func=cmd_remap)

    p = sub.add_parser("agent", help="prompt rendering, response parsing, scoring and calls")
    p.add_argument("action", choices=("render", "parse", "score", "call"))
    p.add_argument("--variant", default=ap.Variant.FILTER_GPT5.value, choices=[v.value for v in ap.Variant])
    p.add_argument("--scene")
    p.add_argument("--classes")
    p.add_argument("--k", type=int)
    p.add_argument("--response", help="response file for parse (default: stdin)")
    p.add_argument("--responses", help="JSON list of verdict maps or kept lists")
    p.add_argument("--truth", help="JSON list of present-class lists")
    p.add_argument("--config", help="agent config (remote) or mock table")
    _fmt(p)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("infer", help="zero-shot classification or segmentation against a bank")
    p.add_argument("action", choices=("classify", "segment"))
    p.add_argument("--bank", required=True)
    p.add_argument("--input", required=True, help=".npy or JSON vector(s) / patch grid")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out-size", help="HxW for segmentation upsampling")
    p.add_argument("--out", help="write the segmentation map as PGM")
    _fmt(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mIoU over PGM maps or acc@1 over JSON label lists")
    p.add_argument("action", choices=("miou", "acc"))
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--num-classes", type=int)
    _fmt(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="seeded sandwich distillation of the toy supernet")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plan-size", type=int, default=4)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--checkpoint", help="write the trained store as an embedding-bank file")
    _fmt(p, default="csv")
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ValidationError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TransportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
