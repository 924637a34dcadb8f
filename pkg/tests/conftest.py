import pytest

from chargesec.crypto import CertStore, KeyDirectory, TrustAnchor, issue_certificate
from chargesec.model import Role


@pytest.fixture
def keys():
    return KeyDirectory()


@pytest.fixture
def pki(keys):
    """A two-level hierarchy: anchor -> ca cert -> leaf cert."""
    store = CertStore()
    root = keys.keygen("root", "anchor")
    anchor = TrustAnchor("root-ca", root.key_id)
    store.add_anchor(anchor)
    ca_key = keys.keygen("emsp", "ca")
    ca = issue_certificate(store, keys, issuer=anchor, subject="emsp",
                           subject_role=Role.EMSP, public_key_id=ca_key.key_id)
    leaf_key = keys.keygen("card", "contract")
    leaf = issue_certificate(store, keys, issuer=ca, subject="card",
                             subject_role=Role.EV, public_key_id=leaf_key.key_id)
    return store, anchor, ca, leaf
