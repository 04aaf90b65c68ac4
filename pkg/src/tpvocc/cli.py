"""Command-line client for the tpvocc service.

The CLI only speaks the service's HTTP API. By default it mounts the
application in-process (no network, no running server needed); pass
``--server URL`` to target a remote instance instead. Exit codes: 0 on
success, 2 for config errors, 3 for data errors, 4 for numerical
failures, 1 for anything unexpected.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

_EXIT_CODES = {"config": 2, "data": 3, "numeric": 4}


class ServiceClient:
    """POSTs to a remote server, or to the in-process ASGI app."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        if self.server:
            resp = httpx.post(self.server + path, json=payload, timeout=None)
            return resp.status_code, resp.json()
        return asyncio.run(self._post_inprocess(path, payload))

    async def _post_inprocess(self, path: str, payload: dict):
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
                transport=transport, base_url="http://tpvocc",
                timeout=None) as client:
            resp = await client.post(path, json=payload)
            return resp.status_code, resp.json()


def _call(ctx, path: str, payload: dict) -> dict:
    client: ServiceClient = ctx.obj["client"]
    try:
        status, body = client.post(path, payload)
    except httpx.HTTPError as e:
        click.echo(f"error: cannot reach service: {e}", err=True)
        sys.exit(1)
    if status == 200:
        return body
    kind = body.get("kind", "internal")
    detail = body.get("detail", json.dumps(body))
    click.echo(f"error ({kind}): {detail}", err=True)
    sys.exit(_EXIT_CODES.get(kind, 1))


def _overrides(ctx) -> dict:
    out = {}
    if ctx.obj["seed"] is not None:
        out["seed"] = ctx.obj["seed"]
    if ctx.obj["deterministic"]:
        out["deterministic"] = True
    if ctx.obj["workers"] is not None:
        out["workers"] = ctx.obj["workers"]
    return out


def _config(ctx) -> str:
    cfg = ctx.obj["config"]
    if cfg is None:
        click.echo("error (config): --config is required for this command",
                   err=True)
        sys.exit(2)
    return cfg


def _out(ctx, override) -> str | None:
    return override if override is not None else ctx.obj["out"]


def _require_out(ctx, override, what: str) -> str:
    out = _out(ctx, override)
    if out is None:
        click.echo(f"error (config): an output path is required ({what}); "
                   "pass --out", err=True)
        sys.exit(2)
    return out


def _emit(result: dict):
    click.echo(json.dumps(result, indent=2))


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running service (default: in-process).")
@click.option("--config", default=None, metavar="PATH",
              help="Pipeline config JSON.")
@click.option("--seed", default=None, type=int, help="Override config seed.")
@click.option("--deterministic", is_flag=True,
              help="Verify checksum-stable, fixed-order execution.")
@click.option("--workers", default=None, type=int,
              help="Override sampling worker count.")
@click.option("--out", default=None, metavar="PATH",
              help="Output path (meaning depends on the subcommand).")
@click.pass_context
def main(ctx, server, config, seed, deterministic, workers, out):
    """Occupancy pipeline toolkit: scene synthesis, sampling, prediction."""
    ctx.ensure_object(dict)
    ctx.obj.update(
        client=ServiceClient(server), config=config, seed=seed,
        deterministic=deterministic, workers=workers, out=out,
    )


@main.command()
@click.option("--boxes", default=None, type=int,
              help="Override the number of boxes in the scene.")
@click.option("--out", "out_", default=None, metavar="DIR")
@click.pass_context
def synth(ctx, boxes, out_):
    """Generate a synthetic scene directory."""
    payload = {"config": _config(ctx),
               "out_dir": _require_out(ctx, out_, "scene directory"),
               "boxes": boxes, **_overrides(ctx)}
    _emit(_call(ctx, "/synth", payload))


@main.command()
@click.argument("scene_dir")
@click.option("--params", default=None, metavar="DIR",
              help="Parameter directory (default: seeded init).")
@click.option("--out", "out_", default=None, metavar="PATH")
@click.pass_context
def pipeline(ctx, scene_dir, params, out_):
    """Run sampling, interaction, and prediction on a scene."""
    payload = {"config": _config(ctx), "scene_dir": scene_dir,
               "out": _require_out(ctx, out_, "prediction OCCG path"),
               "params": params, **_overrides(ctx)}
    _emit(_call(ctx, "/pipeline", payload))


@main.command()
@click.argument("scene_dir")
@click.option("--steps", default=200, type=int, show_default=True)
@click.option("--lr", default=0.5, type=float, show_default=True)
@click.option("--params-out", default=None, metavar="DIR",
              help="Where to save the fitted parameters.")
@click.option("--out", "out_", default=None, metavar="PATH",
              help="Write the loss trace JSON here.")
@click.pass_context
def fit(ctx, scene_dir, steps, lr, params_out, out_):
    """Gradient-descent fit of the conv parameters on one scene."""
    payload = {"config": _config(ctx), "scene_dir": scene_dir,
               "steps": steps, "lr": lr, "out_params": params_out,
               **_overrides(ctx)}
    result = _call(ctx, "/fit", payload)
    trace_path = _out(ctx, out_)
    if trace_path:
        with open(trace_path, "w") as f:
            json.dump(result, f, indent=2)
    _emit(result)


@main.command()
@click.option("--mode", type=click.Choice(["lti", "conv3d_ref", "gss"]),
              required=True)
@click.option("--repeats", default=5, type=int, show_default=True)
@click.option("--out", "out_", default=None, metavar="PATH",
              help="Write the timing JSON here.")
@click.pass_context
def bench(ctx, mode, repeats, out_):
    """Time one pipeline stage; medians over the repeats."""
    payload = {"config": _config(ctx), "mode": mode, "repeats": repeats,
               **_overrides(ctx)}
    result = _call(ctx, "/bench", payload)
    path = _out(ctx, out_)
    if path:
        with open(path, "w") as f:
            json.dump(result, f, indent=2)
    _emit(result)


@main.command()
@click.argument("scene_dirs", nargs=-1, required=True)
@click.option("--flip-axis", type=click.Choice(["X", "Y"]), default=None)
@click.option("--flip-prob", default=0.0, type=float, show_default=True)
@click.option("--out", "out_", default=None, metavar="DIR")
@click.pass_context
def augment(ctx, scene_dirs, flip_axis, flip_prob, out_):
    """Mix scene bundles (center cutmix) and optionally flip."""
    payload = {"config": _config(ctx), "scene_dirs": list(scene_dirs),
               "out_dir": _require_out(ctx, out_, "augmented scene directory"),
               "flip_axis": flip_axis, "flip_probability": flip_prob,
               **_overrides(ctx)}
    _emit(_call(ctx, "/augment", payload))


@main.command("eval")
@click.argument("pred")
@click.argument("truth")
@click.argument("mask")
@click.option("--out", "out_", default=None, metavar="PATH",
              help="Write the report JSON here.")
@click.pass_context
def eval_cmd(ctx, pred, truth, mask, out_):
    """Score a prediction OCCG against truth under a visibility mask."""
    result = _call(ctx, "/eval", {"pred": pred, "truth": truth, "mask": mask})
    path = _out(ctx, out_)
    if path:
        with open(path, "w") as f:
            json.dump(result, f, indent=2)
    _emit(result)


@main.command("dump-slice")
@click.argument("grid")
@click.option("--z", "z_index", default=None, type=int,
              help="BEV slice index; omit for the max-over-z projection.")
@click.option("--out", "out_", default=None, metavar="PATH")
@click.pass_context
def dump_slice(ctx, grid, z_index, out_):
    """Render one BEV slice of an OCCG grid to a PPM image."""
    payload = {"grid": grid, "z_index": z_index,
               "out": _require_out(ctx, out_, "PPM image path")}
    _emit(_call(ctx, "/dump-slice", payload))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
