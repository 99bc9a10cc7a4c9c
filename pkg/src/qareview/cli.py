"""Command-line pipeline: ingest, propose, edit, finalize, evaluate, iaa,
export, and serve.

Every subcommand is idempotent given identical inputs and exits non-zero
on any declared error. Configuration precedence is CLI flags, then
QAREVIEW_* environment variables, then the JSON config file.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import ingest as ingest_mod
from . import metrics
from .config import BadConfig, resolve_config, make_backend
from .export import export_paths, overlay_for_document, write_canonical
from .proposal import ProposalError, build_request, choose_mode, propose as run_proposal
from .session import EditOp, SessionError, finalize as finalize_session
from .store import SessionStore, StoreError, session_key


def _config(ctx: click.Context, **flags):
    base = dict(ctx.obj)
    config_path = base.pop("config_path", None)
    try:
        return resolve_config({**base, **flags}, config_path=config_path)
    except BadConfig as exc:
        raise click.ClickException(str(exc))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file (lowest precedence).")
@click.option("--data-dir", default=None, help="Directory for records and sessions.")
@click.option("--out-dir", default=None, help="Directory for exported documents.")
@click.pass_context
def main(ctx, config_path, data_dir, out_dir):
    """Review workbench for visual-evidence attribution of QA pairs."""
    ctx.obj = {"data_dir": data_dir, "out_dir": out_dir, "config_path": config_path}


@main.command("ingest")
@click.argument("dataset", type=click.Path(exists=True))
@click.pass_context
def ingest_cmd(ctx, dataset):
    """Load a multi-image JSON dataset into the data directory."""
    config = _config(ctx)
    store = SessionStore(config.data_dir)
    try:
        records = ingest_mod.ingest_file(dataset)
    except ingest_mod.IngestError as exc:
        raise click.ClickException(str(exc))
    for record in records:
        store.save_record(record)
    click.echo(f"{len(records)} records stored under {store.records_dir}")


@main.command("propose")
@click.option("--backend", type=click.Choice(["mock", "http"]), default=None)
@click.option("--backend-url", default=None)
@click.option("--seed", type=int, default=None, help="Mock backend seed.")
@click.option("--record", "record_uid", default=None, help="Limit to one image_uid.")
@click.pass_context
def propose_cmd(ctx, backend, backend_url, seed, record_uid):
    """Request evidence proposals for every stored record and QA item."""
    config = _config(ctx, backend=backend, backend_url=backend_url, seed=seed)
    store = SessionStore(config.data_dir)
    try:
        backend_client = make_backend(config)
    except BadConfig as exc:
        raise click.ClickException(str(exc))
    records = store.list_records()
    if record_uid:
        records = [r for r in records if r.image_uid == record_uid]
        if not records:
            raise click.ClickException(f"no stored record {record_uid!r}")
    created = skipped = 0
    for record in records:
        qa_ids = [q.qa_id for q in record.qa_items] or [None]
        for qa_id in qa_ids:
            key = session_key(record.image_uid, qa_id)
            if store.has_session(key):
                skipped += 1
                continue
            qa = record.qa(qa_id) if qa_id else None
            mode = choose_mode(record, qa)
            image_path = Path(record.image_path)
            image_bytes = image_path.read_bytes() if image_path.exists() else None
            try:
                request = build_request(record, qa, mode, image_bytes)
                response = run_proposal(request, backend_client)
            except ProposalError as exc:
                raise click.ClickException(f"{key}: {exc}")
            store.create_session(record, qa_id, response, mode)
            created += 1
            click.echo(f"{key}: {mode.value}, "
                       f"{len(response.selected_ids)} selected, "
                       f"{len(response.generated_regions)} generated")
    click.echo(f"{created} sessions created, {skipped} already proposed")


@main.command("edit")
@click.option("--session", "key", required=True, help="Session key <uid>__<qa>.")
@click.option("--ops", "ops_file", type=click.Path(exists=True), required=True,
              help="JSON Lines file, one edit op per line.")
@click.option("--actor", default="cli")
@click.pass_context
def edit_cmd(ctx, key, ops_file, actor):
    """Apply scripted edit operations to a session."""
    config = _config(ctx)
    store = SessionStore(config.data_dir)
    try:
        live = store.load_session(key)
    except (StoreError, SessionError) as exc:
        raise click.ClickException(str(exc))
    applied = 0
    with open(ops_file, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            data.setdefault("timestamp", live.next_timestamp())
            data.setdefault("actor", actor)
            op = EditOp.from_dict(data)
            try:
                store.apply_and_log(key, live, op)
            except SessionError as exc:
                raise click.ClickException(f"op {op.op.value} at {op.timestamp}: {exc}")
            applied += 1
    click.echo(f"{applied} ops applied to {key} (log length {len(live.edit_log)})")


@main.command("finalize")
@click.option("--session", "key", required=True)
@click.option("--retain-iou", type=float, default=None,
              help="IoU below which an edited proposal counts as removed+redrawn.")
@click.option("--actor", default="cli")
@click.pass_context
def finalize_cmd(ctx, key, retain_iou, actor):
    """Close a reviewed session and record its utility counts."""
    config = _config(ctx, retain_iou=retain_iou)
    store = SessionStore(config.data_dir)
    if store.is_finalized(key):
        click.echo(f"{key} already finalized")
        return
    try:
        live = store.load_session(key)
        result = finalize_session(live, retain_iou=config.retain_iou)
    except (StoreError, SessionError) as exc:
        raise click.ClickException(str(exc))
    from .export import export_record
    from .service import finalize_payload

    document = export_record(live, result)
    store.write_final(key, finalize_payload(live, result, document, actor))
    counts = result.counts
    click.echo(
        f"{key} finalized: retained={counts.retained_pred_count} "
        f"removed={counts.effective_removed_count} added_gt={counts.added_gt_count} "
        f"new_drawn={counts.new_drawn_count}"
    )


def _collect_finalized(sessions_dir: Path) -> dict:
    """Finalized session payloads from a sessions tree or a flat directory."""
    finals = {}
    if not sessions_dir.exists():
        return finals
    for path in sorted(sessions_dir.rglob("*.json")):
        if path.name not in ("final.json",) and path.parent != sessions_dir:
            continue
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and "counts" in data:
            finals[str(path)] = data
    return finals


@main.command("evaluate")
@click.option("--sessions", "sessions_dir", type=click.Path(), default=None,
              help="Directory of finalized session files (default <data-dir>/sessions).")
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.pass_context
def evaluate_cmd(ctx, sessions_dir, csv_path):
    """Micro-averaged utility table across finalized sessions."""
    config = _config(ctx)
    root = Path(sessions_dir) if sessions_dir else Path(config.data_dir) / "sessions"
    finals = _collect_finalized(root)
    if not finals:
        raise click.ClickException(f"no finalized sessions under {root}")
    per_dataset = {}
    for final in finals.values():
        counts = metrics.UtilityCounts.from_dict(final["counts"])
        per_dataset.setdefault(final.get("dataset_type") or "unknown", []).append(counts)
    rows = metrics.utility_rows(per_dataset)
    click.echo(metrics.render_table(rows, metrics.UTILITY_COLUMNS))
    if csv_path:
        Path(csv_path).write_text(
            metrics.render_csv(rows, metrics.UTILITY_COLUMNS), encoding="utf-8"
        )
        click.echo(f"csv written to {csv_path}")


@main.command("iaa")
@click.option("--labels", "labels_path", type=click.Path(exists=True), required=True,
              help="CSV with instance_id, annotator_id, criterion, verdict[, dataset].")
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def iaa_cmd(labels_path, csv_path):
    """Two-annotator agreement (percent and kappa) per criterion."""
    try:
        rows = metrics.iaa_rows(metrics.read_labels_csv(labels_path))
    except metrics.MetricsError as exc:
        raise click.ClickException(str(exc))
    click.echo(metrics.render_table(rows, metrics.IAA_COLUMNS))
    if csv_path:
        Path(csv_path).write_text(metrics.render_csv(rows, metrics.IAA_COLUMNS), encoding="utf-8")
        click.echo(f"csv written to {csv_path}")


@main.command("export")
@click.option("--session", "key", default=None, help="Limit to one session key.")
@click.pass_context
def export_cmd(ctx, key):
    """Write per-image output documents (and overlays) for finalized sessions."""
    config = _config(ctx)
    store = SessionStore(config.data_dir)
    finals = store.finalized_sessions()
    if key:
        if key not in finals:
            raise click.ClickException(f"session {key!r} is not finalized")
        finals = {key: finals[key]}
    if not finals:
        raise click.ClickException("no finalized sessions to export")
    written = []
    for final in finals.values():
        document = final["document"]
        json_path, svg_path = export_paths(config.out_dir, final["image_uid"], final["qa_id"])
        write_canonical(json_path, document)
        record = store.load_record(final["image_uid"])
        if record.image_size is not None:
            svg_path.parent.mkdir(parents=True, exist_ok=True)
            with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(overlay_for_document(document, record.image_size))
            written.append(str(svg_path))
        written.append(str(json_path))
    for path in sorted(written):
        click.echo(path)
    click.echo(f"{len(finals)} sessions exported to {config.out_dir}")


@main.command("serve")
@click.option("--port", type=int, default=None)
@click.option("--backend", type=click.Choice(["mock", "http"]), default=None)
@click.option("--retain-iou", type=float, default=None)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Built UI assets to serve at /.")
@click.pass_context
def serve_cmd(ctx, port, backend, retain_iou, ui_dir):
    """Run the HTTP review service."""
    from .service import PortInUse, serve

    config = _config(ctx, port=port, backend=backend, retain_iou=retain_iou)
    if ui_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = str(bundled) if bundled.exists() else None
    try:
        serve(config, ui_dir=ui_dir)
    except PortInUse as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    main(prog_name="qareview")
