"""Operator entry points: ingest, stats, bench, serve, experiment, and the
similarity-histogram diagnostic.

Exit codes: 0 on success, 1 on runtime failure (including undefined metrics
and hold-out hygiene violations), 2 on usage errors.
"""

from __future__ import annotations

import json
import signal
import sys
from pathlib import Path

import click

from . import __version__
from .errors import NeighborlyError
from .estimators import RatingPredictor, parse_algorithm
from .evaluation import (
    ALL_BUT_ONE,
    GIVEN_RANDOM_X,
    PRODUCTION,
    ProductionConfig,
    run_all_but_one,
    run_given_random_x,
    run_production,
)
from .manager import DataManager
from .matrix import RatingScale, compute_stats, ingest_genders, ingest_ratings
from .similarity import ITEM_ITEM, USER_USER, render_histogram, similarity_histogram
from .storage import InsertionLog, read_snapshot, replay_log, write_snapshot

PROTOCOL_NAMES = {
    "all-but-one": ALL_BUT_ONE,
    "given-random-x": GIVEN_RANDOM_X,
    "production": PRODUCTION,
}


@click.group()
@click.version_option(version=__version__, prog_name="neighborly")
def main() -> None:
    """Neighborhood collaborative-filtering engine for dating-style ratings."""


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _load_snapshot(path: str):
    try:
        return read_snapshot(path)
    except FileNotFoundError:
        raise click.UsageError(f"snapshot file not found: {path}")
    except NeighborlyError as exc:
        raise _fail(str(exc))


def _algorithm(label: str, seed: int) -> RatingPredictor:
    try:
        return parse_algorithm(label, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in label.lower()).strip("-").replace("--", "-")


# -- ingest ---------------------------------------------------------------------


@main.command()
@click.option("--ratings", "ratings_path", required=True, type=click.Path(), help="CSV of user,profile,value")
@click.option("--gender", "gender_path", type=click.Path(), help="CSV of user,{M|F|U}")
@click.option("--header", is_flag=True, help="skip one header line in each CSV")
@click.option("--r-min", default=1, show_default=True, help="minimum rating value")
@click.option("--r-max", default=10, show_default=True, help="maximum rating value")
@click.option(
    "--on-error",
    type=click.Choice(["abort", "skip"]),
    default="abort",
    show_default=True,
    help="malformed-line handling",
)
@click.option("--out", "out_path", required=True, type=click.Path(), help="snapshot file to write")
def ingest(ratings_path, gender_path, header, r_min, r_max, on_error, out_path):
    """Load rating (and optional gender) CSVs into a binary snapshot."""
    if not Path(ratings_path).exists():
        raise click.UsageError(f"ratings file not found: {ratings_path}")
    if gender_path and not Path(gender_path).exists():
        raise click.UsageError(f"gender file not found: {gender_path}")
    try:
        scale = RatingScale(r_min, r_max)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        with open(ratings_path, encoding="utf-8", newline="") as fh:
            result = ingest_ratings(fh, scale, on_error=on_error, header=header)
        attributes = {}
        if gender_path:
            with open(gender_path, encoding="utf-8", newline="") as fh:
                attributes = ingest_genders(fh, on_error=on_error, header=header)
        write_snapshot(out_path, result.matrix, attributes)
    except NeighborlyError as exc:
        raise _fail(str(exc))
    click.echo(
        f"ingested {result.matrix.rating_count} ratings "
        f"({result.skipped_lines} lines skipped) -> {out_path}"
    )


# -- stats ------------------------------------------------------------------------


@main.command()
@click.argument("snapshot", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="emit machine-readable JSON")
def stats(snapshot, as_json):
    """Print the dataset overview block for a snapshot."""
    matrix, attributes = _load_snapshot(snapshot)
    s = compute_stats(matrix, extra_user_ids=attributes)
    if as_json:
        click.echo(json.dumps(s.__dict__, indent=2))
        return
    fmt = lambda v: "undefined" if v is None else v  # noqa: E731
    density = "undefined" if s.density_permille is None else f"{s.density_permille:.4f} per mille"
    moments = (
        "undefined"
        if s.mean is None
        else f"{s.mean:.2f}/{s.median:.2f}/{s.sd:.2f}"
    )
    click.echo(f"total users               {fmt(s.total_users)}")
    click.echo(f"users with ratings        {fmt(s.users_with_ratings)}")
    click.echo(f"items with ratings        {fmt(s.items_with_ratings)}")
    click.echo(f"ratings                   {fmt(s.rating_count)}")
    click.echo(f"density                   {density}")
    click.echo(f"max ratings from 1 user   {fmt(s.max_ratings_one_user)}")
    click.echo(f"max ratings for 1 profile {fmt(s.max_ratings_one_profile)}")
    click.echo(f"rating (mean/med/sd)      {moments} (normalized 0-1)")


# -- bench -----------------------------------------------------------------------


@main.command()
@click.option("--snapshot", required=True, type=click.Path())
@click.option(
    "--protocol",
    type=click.Choice(sorted(PROTOCOL_NAMES)),
    required=True,
)
@click.option(
    "--algorithm",
    "algorithms",
    multiple=True,
    required=True,
    help='e.g. "Random", "Mean", "User-User (10,50)"; repeatable',
)
@click.option("--random-seed", default=0, show_default=True, help="seed for the Random algorithm")
@click.option("--hold-seed", default=17, show_default=True, help="GivenRandomX sampling seed")
@click.option("--block-size", "-k", default=10_000, show_default=True, help="production block size K")
@click.option("--clients", "-n", default=100, show_default=True, help="production concurrent clients")
@click.option("--split-seed", default=0, show_default=True)
@click.option("--order-seed", default=1, show_default=True)
@click.option("--endpoint", default=None, help="host:port of a running mutation service (production)")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="report directory")
def bench(
    snapshot,
    protocol,
    algorithms,
    random_seed,
    hold_seed,
    block_size,
    clients,
    split_seed,
    order_seed,
    endpoint,
    out_dir,
):
    """Run a cross-validation protocol and write plot-ready report files."""
    matrix, _attributes = _load_snapshot(snapshot)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    endpoint_pair = None
    if endpoint is not None:
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise click.UsageError(f"endpoint must be host:port, got {endpoint!r}")
        endpoint_pair = (host, int(port))
    failures = 0
    for label in algorithms:
        algo = _algorithm(label, random_seed)
        try:
            if protocol == "all-but-one":
                report = run_all_but_one(matrix, algo)
            elif protocol == "given-random-x":
                report = run_given_random_x(matrix, algo, hold_seed)
            else:
                cfg = ProductionConfig(
                    n_clients=clients,
                    block_size=block_size,
                    split_seed=split_seed,
                    order_seed=order_seed,
                )
                report = run_production(
                    matrix, algo, cfg, server_endpoint=endpoint_pair
                )
        except NeighborlyError as exc:
            raise _fail(str(exc))
        report.config["snapshot"] = snapshot
        report.config["random_seed"] = random_seed
        path = out / f"{report.protocol}_{_slug(algo.display_name)}.txt"
        path.write_text(report.render(), encoding="utf-8")
        overall = "undefined" if report.overall_nmae is None else f"{report.overall_nmae:.2f}%"
        click.echo(f"{algo.display_name}: NMAE {overall}, skipped {report.skipped} -> {path}")
        if not report.valid:
            failures += 1
            click.echo(f"  WARNING: partial run flagged invalid: {report.extras.get('error')}")
    if failures:
        raise _fail(f"{failures} run(s) flagged invalid")


# -- similarity histogram -----------------------------------------------------------


@main.command("similarity-histogram")
@click.argument("snapshot", type=click.Path())
@click.option("--mode", type=click.Choice(["user", "item"]), default="user", show_default=True)
@click.option("--min-overlap", default=5, show_default=True)
@click.option("--max-anchors", default=None, type=int, help="sample at most this many anchors")
@click.option("--out", "out_path", type=click.Path(), default=None, help="write to file instead of stdout")
def similarity_histogram_cmd(snapshot, mode, min_overlap, max_anchors, out_path):
    """Dump the pairwise similarity distribution in 0.02-wide buckets."""
    matrix, _ = _load_snapshot(snapshot)
    anchors = None
    if max_anchors is not None:
        pool = sorted(matrix.users() if mode == "user" else matrix.profiles())
        anchors = pool[:max_anchors]
    buckets = similarity_histogram(
        matrix,
        mode=USER_USER if mode == "user" else ITEM_ITEM,
        min_overlap=min_overlap,
        anchors=anchors,
    )
    text = render_histogram(buckets)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
        click.echo(f"histogram -> {out_path}")
    else:
        click.echo(text, nl=False)


# -- serve ------------------------------------------------------------------------


def _build_roster(specs: list[dict]) -> dict[int, RatingPredictor]:
    roster = {}
    for spec in specs:
        algo = _algorithm(spec["label"], int(spec.get("seed", 0)))
        roster[int(spec["id"])] = algo
    return roster


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON server config")
def serve(config_path):
    """Run the TCP rating/recommendation services until interrupted.

    Config keys: snapshot, log, host, services {name: port}, algorithms
    [{id, label, seed?}].
    """
    from .server import Server

    cfg = _read_config(config_path)
    matrix, attributes = _load_snapshot(cfg["snapshot"]) if "snapshot" in cfg else _empty()
    log_writer = None
    if cfg.get("log"):
        log_writer = InsertionLog(cfg["log"])
        applied = replay_log(cfg["log"], matrix)
        if applied:
            click.echo(f"replayed {applied} logged insertions")
    roster = _build_roster(cfg.get("algorithms") or [{"id": 1, "label": "Mean"}])
    dm = DataManager(matrix, attributes=attributes, algorithms=roster, log=log_writer)
    server = Server(dm, services=cfg.get("services"), host=cfg.get("host", "127.0.0.1"))
    try:
        server.start()
    except OSError as exc:
        raise _fail(f"startup failed: {exc}")
    for service, port in sorted(server.ports.items()):
        click.echo(f"{service} service on {server.host}:{port}")
    _wait_for_shutdown()
    click.echo("shutting down")
    server.stop()


def _empty():
    from .matrix import RatingsMatrix

    return RatingsMatrix(), {}


def _read_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise click.UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"config is not valid JSON: {exc}")


def _wait_for_shutdown() -> None:
    stop = {"flag": False}

    def handler(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    while not stop["flag"]:
        signal.pause()


# -- experiment gateway ----------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON gateway config")
def experiment(config_path):
    """Run the duel-experiment HTTP gateway until interrupted.

    Config keys: host, port, snapshot?, rating_target, list_length,
    algorithms [{id, label, seed?}], seed, asset_template, idle_timeout_s,
    event_log, static_dir.
    """
    import uvicorn

    from .duel import DuelStore
    from .gateway import create_app, mount_static

    cfg = _read_config(config_path)
    matrix, attributes = (
        _load_snapshot(cfg["snapshot"]) if cfg.get("snapshot") else _empty()
    )
    roster = _build_roster(
        cfg.get("algorithms")
        or [
            {"id": 1, "label": "Random", "seed": 7},
            {"id": 2, "label": "Mean"},
            {"id": 3, "label": "User-User (10,50)"},
        ]
    )
    store = DuelStore(
        roster,
        base_matrix=matrix,
        attributes=attributes,
        rating_target=int(cfg.get("rating_target", 150)),
        list_length=int(cfg.get("list_length", 10)),
        seed=cfg.get("seed"),
        asset_template=cfg.get("asset_template", "placeholder://profile/{id}"),
        idle_timeout=float(cfg.get("idle_timeout_s", 1800.0)),
        event_log_path=cfg.get("event_log"),
    )
    app = create_app(store)
    if cfg.get("static_dir"):
        mount_static(app, cfg["static_dir"])
    host = cfg.get("host", "127.0.0.1")
    port = int(cfg.get("port", 8000))
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        store.close()


if __name__ == "__main__":
    main()
