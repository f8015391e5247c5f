"""Smoke test for the permwatch_py extension module."""

import json

import permwatch_py as pw


def main():
    v1 = pw.parse_apk(pw.build_apk("com.example.notes", 1, ["READ_CONTACTS"], signer="notes"))
    v2 = pw.parse_apk(pw.build_apk("com.example.notes", 2, ["READ_CONTACTS", "WRITE_CONTACTS"], signer="notes"))
    assert v1.package_name == "com.example.notes"
    assert "android.permission.WRITE_CONTACTS" in v2.requested_permissions
    assert v1.cert_digest is not None and v1.cert_digest == v2.cert_digest
    assert pw.ApkFacts.from_json(v1.to_json()).sha256 == v1.sha256

    for i, f in enumerate((v1, v2)):
        f.dex_year = 2021 + i
        f.vt_detections = 0
    events, summary = pw.detect_expansions([v1, v2])
    assert len(events) == 1 and events[0]["group"] == "CONTACTS", events
    assert summary["expanding_apps"] == 1

    catalog = pw.GroupCatalog()
    assert catalog.group_of("android.permission.READ_SMS", 2024) == "SMS"

    assert abs(pw.odds_ratio(10, 20, 5, 40) - 4.0) < 1e-9
    chi2, p = pw.chi_squared(10, 20, 5, 40)
    assert chi2 > 0 and 0 < p < 1
    pooled, lo, hi = pw.mantel_haenszel([(10, 20, 5, 40), (8, 12, 6, 30)])
    assert lo < pooled < hi

    sim = pw.Simulator()
    sim.install("com.s", 1, ["READ_CALENDAR"])
    sim.user_grant("com.s", "android.permission.READ_CALENDAR")
    sim.update("com.s", 2, ["READ_CALENDAR", "WRITE_CALENDAR"])
    assert sim.is_granted("com.s", "android.permission.WRITE_CALENDAR")
    assert sim.prompt_log()[-1]["outcome"] == "auto_granted"

    mon = pw.Monitor()
    base = {"package": "com.m", "granted_groups": ["SMS"]}
    mon.on_event(json.dumps({**base, "timestamp": "2024-01-01", "event": "added", "version_code": 1,
                             "permissions": ["android.permission.READ_SMS"]}))
    texts = mon.on_event(json.dumps({**base, "timestamp": "2024-01-05", "event": "replaced", "version_code": 2,
                                     "permissions": ["android.permission.READ_SMS", "android.permission.SEND_SMS"]}))
    assert len(texts) == 1 and "com.m" in texts[0], texts
    print("smoke test passed")


if __name__ == "__main__":
    main()
