"""Queue-reactive limit order book calibration, simulation and stylized-fact scoring."""
from .lob import Eta, InvalidEventError, InvalidParameterError, LobState, OrderEvent, RefPricePolicy, Side
from .model import IntensityTable, QRModel, SizeDistribution

__version__ = "0.1.0"

__all__ = [
    "Eta", "Side", "LobState", "OrderEvent", "RefPricePolicy", "InvalidEventError", "InvalidParameterError",
    "IntensityTable", "QRModel", "SizeDistribution", "__version__",
]
