from gameid.catalog.cache import CatalogCache, sha256_bytes
from gameid.catalog.client import (
    DEFAULT_BASE_URL,
    CatalogClient,
    RateLimiter,
    download_images,
    fetch_screenshot_image,
    fetch_system_catalog,
)
from gameid.catalog.records import (
    AuthRejected,
    CatalogError,
    ChecksumMismatch,
    GameRecord,
    ImageNotFound,
    MalformedResponse,
    NotFound,
    ProviderUnavailable,
    RateLimited,
    ScreenshotRecord,
    catalog_from_json,
    catalog_to_json,
)
from gameid.catalog.transport import FixtureTransport, HttpTransport, Response, canonical_key

__all__ = [
    "DEFAULT_BASE_URL",
    "AuthRejected",
    "CatalogCache",
    "CatalogClient",
    "CatalogError",
    "ChecksumMismatch",
    "FixtureTransport",
    "GameRecord",
    "HttpTransport",
    "ImageNotFound",
    "MalformedResponse",
    "NotFound",
    "ProviderUnavailable",
    "RateLimited",
    "RateLimiter",
    "Response",
    "ScreenshotRecord",
    "canonical_key",
    "catalog_from_json",
    "catalog_to_json",
    "download_images",
    "fetch_screenshot_image",
    "fetch_system_catalog",
    "sha256_bytes",
]
