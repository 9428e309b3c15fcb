"""Latent order book dynamics: mean latent book evolution, batch auctions,
impact analytics, the self-similar frequent-auction book, an agent-level
simulator and limit-order-book snapshot ingestion."""

__version__ = "0.1.0"
