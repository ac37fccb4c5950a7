"""Builds the Rust extension with cargo; no extra build-time packages.

`pip install -e . --no-build-isolation` compiles crates/esqpt-py in
release mode and drops the shared library into python/esqpt/.
"""

import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = Path(__file__).resolve().parent


class CargoExtension(Extension):
    def __init__(self, name: str, manifest: str):
        super().__init__(name, sources=[])
        self.manifest = manifest


class CargoBuildExt(build_ext):
    def build_extension(self, ext: CargoExtension) -> None:
        subprocess.run(
            [
                "cargo",
                "build",
                "--release",
                "--manifest-path",
                str(ROOT / ext.manifest),
            ],
            check=True,
        )
        stem = "esqpt_native"
        candidates = [
            ROOT / "target" / "release" / f"lib{stem}.so",
            ROOT / "target" / "release" / f"lib{stem}.dylib",
            ROOT / "target" / "release" / f"{stem}.dll",
        ]
        built = next((c for c in candidates if c.exists()), None)
        if built is None:
            sys.exit(f"cargo did not produce a shared library for {stem}")
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    ext_modules=[CargoExtension("esqpt._native", "crates/esqpt-py/Cargo.toml")],
    cmdclass={"build_ext": CargoBuildExt},
)
