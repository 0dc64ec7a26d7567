"""Command line: emit or verify a goldens directory."""

from __future__ import annotations

import sys

import click

from .emit import emit_goldens
from .verify import IntegrityError, verify_manifest


@click.group()
def main():
    """Golden test-vector generator for style-transfer kernels."""


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def emit(seed, out_dir):
    """Emit every golden case and the hashed manifest."""
    path = emit_goldens(seed, out_dir)
    click.echo(f"wrote {path}")


@main.command()
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
def verify(directory):
    """Check manifest hashes and tensor-file integrity."""
    try:
        info = verify_manifest(directory)
    except IntegrityError as e:
        click.echo(f"FAIL {e}", err=True)
        sys.exit(1)
    click.echo(f"OK {info['cases']} cases, {info['files']} files")


if __name__ == "__main__":
    main()
