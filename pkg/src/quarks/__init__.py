"""Quarks: a decentralized messaging network.

Independent nodes host users, keep one permissioned hash-chained ledger
per chat channel, run a certificate-guarded contract for membership and
encrypted message storage, and federate by replicating channel ledgers.
Clients encrypt end to end; nodes only ever see ciphertext.
"""

__version__ = "0.1.0"
