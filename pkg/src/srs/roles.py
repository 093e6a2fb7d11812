"""Governance roles and the permission table they carry.

The table is the single authority check used everywhere: constraint
revision, proposal decisions, slow actuation, harm reports, appeals,
metadata edits.
"""

from dataclasses import dataclass
from enum import Enum

from .errors import Unauthorized


class Role(str, Enum):
    GOVERNANCE_BOARD = "GovernanceBoard"
    STAKEHOLDER_COUNCIL = "StakeholderCouncil"
    COMPLIANCE_OFFICER = "ComplianceOfficer"
    REDRESS_OFFICER = "RedressOfficer"
    SRS_ENGINEER = "SrsEngineer"


# action -> roles allowed to perform it
PERMISSIONS = {
    "approve_proposal": frozenset({Role.GOVERNANCE_BOARD}),
    "revise_constraints": frozenset({Role.GOVERNANCE_BOARD}),
    "authorize_rollback": frozenset({Role.GOVERNANCE_BOARD}),
    "authorize_retrain": frozenset({Role.GOVERNANCE_BOARD}),
    "file_harm_report": frozenset({Role.STAKEHOLDER_COUNCIL}),
    "edit_constraint_metadata": frozenset({Role.COMPLIANCE_OFFICER}),
    "manage_appeals": frozenset({Role.REDRESS_OFFICER}),
    "apply_approved_actions": frozenset({Role.SRS_ENGINEER}),
}


@dataclass(frozen=True)
class GovernanceRole:
    role: Role
    id: str

    def can(self, action: str) -> bool:
        return self.role in PERMISSIONS[action]

    def require(self, action: str):
        if not self.can(action):
            raise Unauthorized(f"{self.role.value} ({self.id}) may not {action}")


def parse_role(name: str) -> Role:
    """Accept either the enum value ('GovernanceBoard') or the enum name."""
    for role in Role:
        if name in (role.value, role.name):
            return role
    raise Unauthorized(f"unknown governance role {name!r}")
