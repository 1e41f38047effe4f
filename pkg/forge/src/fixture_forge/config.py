"""Forge configuration with the defang envelope enforced in code.

Every network endpoint must be loopback and every filesystem target must
sit under the corpus sandbox subtree; builders call validate() before
constructing anything, so a hostile configuration aborts up front.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import DefangError

DEFAULT_ENDPOINT = "127.0.0.1:39000"


def _host_is_loopback(host: str) -> bool:
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        # arbitrary hostnames are never trusted (and never resolved)
        return False


def check_endpoint(endpoint: str) -> None:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise DefangError(f"endpoint {endpoint!r} is not host:port")
    if not _host_is_loopback(host):
        raise DefangError(f"endpoint host {host!r} is not loopback; refusing to build")


@dataclass(frozen=True)
class ForgeConfig:
    out_dir: Path
    endpoint: str = DEFAULT_ENDPOINT
    secret_file: Optional[Path] = None
    profile_file: Optional[Path] = None

    def __post_init__(self):
        # builders change cwd while serializing, so a relative out_dir must
        # be pinned to its initial absolute location up front
        object.__setattr__(self, "out_dir", Path(self.out_dir).resolve())

    @property
    def sandbox_dir(self) -> Path:
        return (Path(self.out_dir) / "sandbox").resolve()

    @property
    def secret_path(self) -> Path:
        if self.secret_file is not None:
            return Path(self.secret_file).resolve()
        return self.sandbox_dir / "secret.txt"

    @property
    def profile_path(self) -> Path:
        if self.profile_file is not None:
            return Path(self.profile_file).resolve()
        return self.sandbox_dir / "home" / ".bashrc"

    @property
    def payload_path(self) -> Path:
        return self.profile_path.parent / "payload.py"

    @property
    def home_glob(self) -> str:
        return str(self.sandbox_dir / "home" / "*")

    @property
    def checkpoint_prefix(self) -> str:
        return str(self.sandbox_dir / "ckpt" / "model")

    def _require_in_sandbox(self, label: str, path: Path) -> None:
        try:
            path.relative_to(self.sandbox_dir)
        except ValueError:
            raise DefangError(
                f"{label} {str(path)!r} is outside the sandbox subtree "
                f"{str(self.sandbox_dir)!r}; refusing to build"
            )

    def validate(self) -> None:
        check_endpoint(self.endpoint)
        self._require_in_sandbox("secret_file", self.secret_path)
        self._require_in_sandbox("profile_file", self.profile_path)

    def prepare_dirs(self) -> None:
        self.validate()
        Path(self.out_dir).mkdir(parents=True, exist_ok=True)
        (self.sandbox_dir / "home").mkdir(parents=True, exist_ok=True)
