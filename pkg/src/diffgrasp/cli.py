"""Command-line interface: a thin client of the grasp service.

Every command talks to the service over its HTTP/JSON wire format: by
default an in-process instance of the app, or a remote server when --server
is given. Files are written client-side from response payloads; floats
round-trip JSON exactly, so identical seeds give byte-identical outputs.
"""
from __future__ import annotations

import json
import sys

import click

PARAM_FLAGS = (
    ("alpha", "--alpha"),
    ("beta", "--beta"),
    ("mu", "--mu"),
    ("m", "--m"),
    ("directions", "--directions"),
    ("c_coll", "--c-coll"),
    ("c_self", "--c-self"),
    ("c_guide", "--c-guide"),
    ("c_data", "--c-data"),
    ("beta_coll", "--beta-coll"),
)


class ServiceClient:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self.http = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self.http = TestClient(create_app())

    def call(self, method: str, path: str, payload=None):
        resp = self.http.request(method, path, json=payload)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise click.ClickException(str(detail))
        return resp.json()

    def open_session(self, mesh, gripper, params):
        payload = {"mesh_path": mesh, "gripper_path": gripper}
        if params:
            payload["params"] = params
        return self.call("POST", "/sessions", payload)

    def close_session(self, session_id):
        self.call("DELETE", f"/sessions/{session_id}")


def _params_payload(kwargs):
    """Explicitly set parameter flags, merged over the service defaults."""
    chosen = {name: kwargs[name] for name, _ in PARAM_FLAGS if kwargs.get(name) is not None}
    if not chosen:
        return None
    base = {name: kwargs[name] for name, _ in PARAM_FLAGS if kwargs.get(name) is not None}
    return base


def param_options(fn):
    for name, flag in reversed(PARAM_FLAGS):
        kind = int if name == "directions" else float
        fn = click.option(flag, name, type=kind, default=None,
                          help=f"override parameter {name}")(fn)
    return fn


def _show_params(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    client = ServiceClient(None)
    doc = client.call("GET", "/params")
    order = [name for name, _ in PARAM_FLAGS]
    for name in order:
        click.echo(f"{name} {doc[name]!r}")
    ctx.exit(0)


@click.group(invoke_without_command=True)
@click.option("--server", default=None, help="remote service URL (default: in-process)")
@click.option("--show-params", is_flag=True, callback=_show_params, expose_value=False,
              is_eager=True, help="print parameter defaults and exit")
@click.pass_context
def main(ctx, server):
    """Differentiable grasp metrics and planning."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


def _pose_payload_from_file(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise click.ClickException(f"pose file not found: {path}")
    return {
        "translation": doc["translation"],
        "rotation_axis_angle": doc["rotation_axis_angle"],
        "joints_raw": doc["joints_raw"],
    }


def _write_pose_file(path, gripper_name, pose):
    doc = {
        "gripper": gripper_name,
        "translation": pose["translation"],
        "rotation_axis_angle": pose["rotation_axis_angle"],
        "joints_raw": pose["joints_raw"],
        "joints_realized": pose["joints_realized"],
    }
    with open(path, "w") as f:
        f.write(json.dumps(doc, indent=2) + "\n")


@main.command()
@click.option("--mesh", required=True, help="object mesh (.obj or .stl)")
@click.option("--gripper", default="builtin", help="gripper JSON or 'builtin'")
@click.option("--seed", default=0, type=int)
@click.option("--iters", default=2000, type=int)
@click.option("--optimizer", default="backtracking",
              type=click.Choice(["backtracking", "adam"]))
@click.option("--mode", default="upper", type=click.Choice(["upper", "lower"]))
@click.option("--step-size", default=0.02, type=float)
@click.option("--grad-tol", default=1e-6, type=float)
@click.option("--init", "init_policy", default="default",
              type=click.Choice(["default", "jitter"]))
@click.option("--out", default=None, help="pose output file")
@click.option("--trace", default=None, help="trace output file")
@click.option("--export-obj", default=None, help="posed-gripper OBJ output file")
@param_options
@click.pass_context
def plan(ctx, mesh, gripper, seed, iters, optimizer, mode, step_size, grad_tol,
         init_policy, out, trace, export_obj, **params):
    """Run the standalone planner and write pose/trace files."""
    client = ServiceClient(ctx.obj["server"])
    sess = client.open_session(mesh, gripper, _params_payload(params))
    try:
        resp = client.call("POST", f"/sessions/{sess['session_id']}/plan", {
            "optimizer": optimizer,
            "step_size": step_size,
            "max_iterations": iters,
            "grad_tol": grad_tol,
            "mode": mode,
            "seed": seed,
            "init_policy": init_policy,
        })
        if out:
            _write_pose_file(out, sess["gripper"]["name"], resp["pose"])
        if trace:
            from .io import trace_to_text

            with open(trace, "w") as f:
                f.write(trace_to_text(resp["trace"]))
        if export_obj:
            obj = client.call("POST", f"/sessions/{sess['session_id']}/export-obj",
                              {"pose": {k: resp["pose"][k] for k in
                                        ("translation", "rotation_axis_angle", "joints_raw")}})
            with open(export_obj, "w") as f:
                f.write(obj["obj"])
        final = resp["final"]
        click.echo(f"termination {resp['termination']} after {len(resp['trace'])} iterations")
        click.echo(f"total {final['total']!r} q1 {final['q1']!r} "
                   f"max_penetration {final['max_penetration']!r}")
        if resp["init_fallback_joints"]:
            click.echo("init fallback (mid-range): " + " ".join(resp["init_fallback_joints"]))
        ctx.exit(0 if resp["converged"] else 2)
    finally:
        client.close_session(sess["session_id"])


@main.command()
@click.option("--mesh", required=True)
@click.option("--gripper", default="builtin")
@click.option("--pose", "pose_path", required=True, help="pose file from plan")
@click.option("--mode", default="upper", type=click.Choice(["upper", "lower", "both"]))
@click.option("--dense", is_flag=True, help="also run the dense direction oracle")
@click.option("--dense-directions", default=100_000, type=int)
@click.option("--seed", default=0, type=int)
@param_options
@click.pass_context
def metric(ctx, mesh, gripper, pose_path, mode, dense, dense_directions, seed, **params):
    """Evaluate the grasp metric and loss terms at a stored pose."""
    client = ServiceClient(ctx.obj["server"])
    sess = client.open_session(mesh, gripper, _params_payload(params))
    try:
        resp = client.call("POST", f"/sessions/{sess['session_id']}/metric", {
            "pose": _pose_payload_from_file(pose_path),
            "mode": mode,
            "dense": dense,
            "dense_directions": dense_directions,
            "seed": seed,
        })
        for key in ("q1_upper", "q1_lower", "q1_dense"):
            if resp[key] is not None:
                click.echo(f"{key} {resp[key]!r}")
        losses = resp["losses"]
        for key in ("q1", "q1_term", "coll", "self_coll", "guide", "total",
                    "max_penetration"):
            click.echo(f"{key} {losses[key]!r}")
        click.echo("contact_weights " + " ".join(repr(w) for w in resp["contact_weights"]))
        click.echo("contact_distances " + " ".join(repr(d) for d in resp["contact_distances"]))
        if resp["sandwich_ok"] is not None:
            click.echo(f"sandwich_ok {resp['sandwich_ok']}")
            if not resp["sandwich_ok"]:
                raise click.ClickException("sandwich violated: lower <= dense <= upper failed")
    finally:
        client.close_session(sess["session_id"])


@main.command()
@click.option("--mesh", required=True)
@click.option("--gripper", default="builtin")
@click.option("--seed", default=0, type=int)
@click.option("--count", default=20, type=int)
@click.option("--tolerance", default=1e-3, type=float)
@click.option("--mode", default="upper", type=click.Choice(["upper", "lower"]))
@param_options
@click.pass_context
def gradcheck(ctx, mesh, gripper, seed, count, tolerance, mode, **params):
    """Compare analytic gradients against central finite differences."""
    client = ServiceClient(ctx.obj["server"])
    sess = client.open_session(mesh, gripper, _params_payload(params))
    try:
        resp = client.call("POST", f"/sessions/{sess['session_id']}/gradcheck", {
            "seed": seed, "count": count, "tolerance": tolerance, "mode": mode,
        })
        for e in resp["checks"]:
            status = "pass" if e["passed"] else "FAIL"
            click.echo(f"{status} config {e['config_index']} {e['term']} "
                       f"rel_err {e['max_rel_err']:.3e}")
        if resp["warning"]:
            click.echo(f"warning: {resp['warning']}")
        click.echo("all passed" if resp["all_passed"] else "FAILURES present")
        if not resp["all_passed"]:
            ctx.exit(1)
    finally:
        client.close_session(sess["session_id"])


@main.command("mesh-info")
@click.option("--mesh", required=True)
@click.pass_context
def mesh_info(ctx, mesh):
    """Validate a mesh and print its statistics report."""
    client = ServiceClient(ctx.obj["server"])
    resp = client.call("POST", "/mesh-report", {"mesh_path": mesh})
    click.echo(resp["report"], nl=False)


@main.command()
@click.option("--out", required=True, help="directory for fixture files")
def fixtures(out):
    """Write the bundled fixture meshes and test gripper to a directory."""
    import os

    from .fixtures import build_test_gripper, fixture_mesh, mesh_to_obj_text, mesh_to_stl_bytes
    from .gripper import gripper_to_dict

    os.makedirs(out, exist_ok=True)
    for name in ("sphere", "cube", "torus", "unit-cube"):
        mesh = fixture_mesh(name)
        path = os.path.join(out, name + ".obj")
        with open(path, "w") as f:
            f.write(mesh_to_obj_text(mesh.vertices, mesh.triangles, comment=name))
        click.echo(f"wrote {path}")
    stl_path = os.path.join(out, "unit-cube.stl")
    with open(stl_path, "wb") as f:
        f.write(mesh_to_stl_bytes(fixture_mesh("unit-cube")))
    click.echo(f"wrote {stl_path}")
    gpath = os.path.join(out, "trijaw.json")
    with open(gpath, "w") as f:
        json.dump(gripper_to_dict(build_test_gripper()), f, indent=1)
        f.write("\n")
    click.echo(f"wrote {gpath}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8099, type=int)
def serve(host, port):
    """Run the grasp service with uvicorn."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
