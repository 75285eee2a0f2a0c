"""Great-circle distance helpers shared by preprocessing and context building."""

import numpy as np

EARTH_RADIUS_KM = 6371.0


def haversine_km(lat1, lon1, lat2, lon2):
    """Haversine distance in kilometers. Inputs in degrees, scalars or arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64)) for x in (lat1, lon1, lat2, lon2))
    dlat = 0.5 * (lat2 - lat1)
    dlon = 0.5 * (lon2 - lon1)
    a = np.sin(dlat) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon) ** 2
    c = 2.0 * np.arctan2(np.sqrt(np.clip(a, 0.0, 1.0)), np.sqrt(np.clip(1.0 - a, 0.0, 1.0)))
    return EARTH_RADIUS_KM * c


def pairwise_haversine_km(coords):
    """All-pairs haversine matrix for an (n, 2) array of [lat, lon] degrees."""
    coords = np.asarray(coords, dtype=np.float64)
    lat = coords[:, 0][:, None]
    lon = coords[:, 1][:, None]
    return haversine_km(lat, lon, lat.T, lon.T)


def max_pairwise_km(coords):
    """Largest haversine distance between any two of the given points."""
    coords = np.unique(np.asarray(coords, dtype=np.float64), axis=0)
    if len(coords) < 2:
        return 0.0
    return float(pairwise_haversine_km(coords).max())
