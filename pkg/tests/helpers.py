"""Small fixtures shared by the test modules."""
from autobid.market import AdRequest, Slot


def make_request(rid=1, quality=None, cvr=None, factors=(1.0,), value_class="base"):
    quality = dict(quality)
    cvr = dict(cvr) if cvr is not None else {adv: 1.0 for adv in quality}
    slots = tuple(Slot(k + 1, f) for k, f in enumerate(factors))
    return AdRequest(rid, value_class, slots, tuple(quality), quality, cvr)


def unit_request(advertisers, factors=(1.0,), rid=1):
    """Every advertiser with quality 1 and cvr 1."""
    return make_request(rid, {a: 1.0 for a in advertisers}, None, factors)
