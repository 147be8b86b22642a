"""Shared exception types.

Validation problems raise plain ValueError; failures of external providers
(network, malformed responses, exhausted retries) raise ProviderError so the
CLI can map them to a distinct exit code.
"""


class ProviderError(RuntimeError):
    """A chat or embedding backend failed after any configured retries."""
