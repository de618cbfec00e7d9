"""Thin client for the HTTP service.

The default client mounts the application in-process, so commands work
with no daemon; pointing at a remote base URL swaps the transport
without changing any call site.
"""

from __future__ import annotations

from typing import Any

_EXIT_BY_CODE = {"usage": 1, "data": 2, "bridge": 3}


class ServiceFailure(Exception):
    """An error envelope returned by the service."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message

    @property
    def exit_code(self) -> int:
        return _EXIT_BY_CODE.get(self.code, 2)


class ServiceClient:
    def __init__(self, http: Any):
        self._http = http

    @staticmethod
    def local() -> "ServiceClient":
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            from fastapi.testclient import TestClient

        from .service import create_app

        return ServiceClient(TestClient(create_app(), raise_server_exceptions=False))

    @staticmethod
    def remote(base_url: str) -> "ServiceClient":
        import httpx

        return ServiceClient(httpx.Client(base_url=base_url, timeout=600.0))

    def call(self, path: str, body: dict | None = None) -> dict:
        if body is None:
            response = self._http.get(path)
        else:
            response = self._http.post(path, json=body)
        if response.status_code == 200:
            return response.json()
        try:
            detail = response.json().get("detail")
        except ValueError:
            detail = None
        if isinstance(detail, dict) and "code" in detail:
            raise ServiceFailure(detail["code"], detail.get("message", ""))
        if isinstance(detail, (list, str)):
            # Request-body validation failures are usage errors.
            raise ServiceFailure("usage", str(detail))
        raise ServiceFailure("internal", f"HTTP {response.status_code}")

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
