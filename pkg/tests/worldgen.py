"""Randomized world construction shared by the probe and acceptance sweeps.

Each generated world has six target domains with randomized schemes,
request-size limits, endpoint menus, visit history (jar cookies) and
list membership, all built through ordinary navigations and fetches.
``soundness_failures`` runs every probe against every target and
returns human-readable descriptions of any verdict that disagrees with
ground truth, any channel that was applicable yet inconclusive, and any
ledger mutation caused by probing.
"""

import random
from dataclasses import dataclass

from itpsim import itp_core, probes
from itpsim.probes import AttackerView, Verdict
from itpsim.web_sim import Resource, ServerBehavior, World

ATTACKER_HOST = "attacker.example"
ATTACKER_ORIGIN = "https://attacker.example"
FIRST_PARTIES = ("fp0.example", "fp1.example", "fp2.example", "fp3.example")
TARGETS_PER_WORLD = 6


@dataclass
class TargetPlan:
    host: str
    scheme: str
    max_request_bytes: int
    visited: bool
    listed: bool
    public_path: str | None
    auth_path: str | None
    auth_cookie: str
    open_redirect_path: str | None
    conditional_path: str | None
    upload_path: str | None

    @property
    def site(self) -> str:
        return self.host

    @property
    def has_loadable(self) -> bool:
        # The conditional-redirect login page is public, hence loadable.
        return bool(self.public_path or self.upload_path or self.conditional_path)

    def behavior(self) -> ServerBehavior:
        resources = {}
        if self.public_path:
            resources[self.public_path] = Resource.public()
        if self.auth_path:
            resources[self.auth_path] = Resource.auth_required(self.auth_cookie)
        if self.open_redirect_path:
            resources[self.open_redirect_path] = Resource.open_redirect()
        if self.conditional_path:
            resources[self.conditional_path] = Resource.conditional_redirect(
                self.auth_cookie, f"{self.scheme}://{self.host}/login"
            )
            resources["/login"] = Resource.public()
        if self.upload_path:
            resources[self.upload_path] = Resource.upload_echo()
        return ServerBehavior(
            scheme=self.scheme,
            max_request_bytes=self.max_request_bytes,
            resources=resources,
            cookies_on_visit=((self.auth_cookie, "secret"), ("VISIT", "1")),
        )

    def applicable_channels(self, manual_enabled: bool = True) -> set[str]:
        applicable = set()
        if self.has_loadable:
            applicable.add(probes.OVERLONG_REFERER)
        if self.auth_path and self.visited:
            applicable.add(probes.AUTH_RESOURCE)
        if self.open_redirect_path and self.visited:
            applicable.add(probes.REDIRECT_COOKIE)
        if self.conditional_path and self.visited and manual_enabled:
            applicable.add(probes.REDIRECT_MANUAL)
        if self.upload_path:
            applicable.add(probes.UPLOADED_REFERRER)
        if self.scheme == "http":
            applicable.add(probes.PLAINTEXT_OBSERVER)
        return applicable


def generate_world(seed: int) -> tuple[World, AttackerView, list[TargetPlan]]:
    rng = random.Random(seed)
    plans = []
    for i in range(TARGETS_PER_WORLD):
        plans.append(
            TargetPlan(
                host=f"t{i}.example",
                scheme=rng.choice(("http", "https")),
                max_request_bytes=rng.randint(4096, 131072),
                visited=rng.random() < 0.6,
                listed=rng.random() < 0.5,
                public_path="/asset.gif" if rng.random() < 0.75 else None,
                auth_path="/private/api.js" if rng.random() < 0.6 else None,
                auth_cookie=f"SESS{i}",
                open_redirect_path="/redirect" if rng.random() < 0.6 else None,
                conditional_path="/guarded.css" if rng.random() < 0.6 else None,
                upload_path="/uploads/echo.html" if rng.random() < 0.6 else None,
            )
        )
    servers = {ATTACKER_HOST: ServerBehavior()}
    for first_party in FIRST_PARTIES:
        servers[first_party] = ServerBehavior()
    for plan in plans:
        servers[plan.host] = plan.behavior()
    world = World(servers)
    for plan in plans:
        if plan.visited:
            world.navigate(f"{plan.scheme}://{plan.host}/")
    for plan in plans:
        if plan.listed:
            for first_party in FIRST_PARTIES[:3]:
                doc = world.navigate(f"https://{first_party}/")
                world.advance_clock(5.0)
                # Any delivered request records the strike; 404 is fine.
                world.fetch(doc, f"{plan.scheme}://{plan.host}/seed.gif")
    view = AttackerView(world, {ATTACKER_HOST})
    return world, view, plans


def run_probes(view: AttackerView, plan: TargetPlan) -> list[probes.ProbeVerdict]:
    results = [probes.probe_overlong_referer(view, ATTACKER_ORIGIN, plan.site)]
    if plan.auth_path:
        results.append(probes.probe_auth_resource(view, ATTACKER_ORIGIN, plan.site, plan.auth_path))
    if plan.open_redirect_path:
        results.append(
            probes.probe_redirect_cookie(view, ATTACKER_ORIGIN, plan.site, plan.open_redirect_path)
        )
    if plan.conditional_path:
        results.append(
            probes.probe_redirect_cookie(view, ATTACKER_ORIGIN, plan.site, plan.conditional_path)
        )
    if plan.upload_path:
        results.append(
            probes.probe_uploaded_referrer(view, ATTACKER_ORIGIN, plan.site, plan.upload_path)
        )
    results.append(probes.probe_plaintext_observer(view, ATTACKER_ORIGIN, plan.site))
    return results


def soundness_failures(seed: int) -> list[str]:
    """All probe/ground-truth disagreements in one generated world."""
    world, view, plans = generate_world(seed)
    failures = []
    for plan in plans:
        truth = itp_core.is_prevalent(world.itp_state, plan.site)
        ledger_before = world.itp_state.ledger
        applicable = plan.applicable_channels()
        for pv in run_probes(view, plan):
            where = f"world {seed}, {plan.site}, {pv.channel}"
            if pv.destructive:
                failures.append(f"{where}: probe marked itself destructive")
            if pv.verdict is Verdict.INCONCLUSIVE:
                if pv.channel in applicable:
                    failures.append(f"{where}: inconclusive although applicable")
                continue
            if (pv.verdict is Verdict.ON_LIST) != truth:
                failures.append(f"{where}: verdict contradicts ground truth ({truth})")
        if world.itp_state.ledger != ledger_before:
            failures.append(f"world {seed}, {plan.site}: probing mutated the strike ledger")
    return failures
