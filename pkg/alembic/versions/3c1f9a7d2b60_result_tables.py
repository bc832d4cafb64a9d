"""Result tables

Revision ID: 3c1f9a7d2b60
Revises: 
Create Date: 2026-10-17 10:12:41.402118

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3c1f9a7d2b60'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table(
        'run_summaries',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('experiment', sa.String(), nullable=False),
        sa.Column('mode', sa.String(), nullable=False),
        sa.Column('revenue', sa.Float(), nullable=False),
        sa.Column('revenue_postproc', sa.Float(), nullable=False),
        sa.Column('regret_ir_mean', sa.Float(), nullable=False),
        sa.Column('regret_ir_max', sa.Float(), nullable=False),
        sa.Column('pay_cor_share', sa.Float(), nullable=False),
        sa.Column('wallclock_s', sa.Float(), nullable=False),
        sa.Column('seed', sa.Integer(), nullable=False),
        sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
        sa.PrimaryKeyConstraint('id'),
    )
    op.create_index(op.f('ix_run_summaries_id'), 'run_summaries', ['id'], unique=False)
    op.create_index(op.f('ix_run_summaries_experiment'), 'run_summaries', ['experiment'], unique=False)
    op.create_index(op.f('ix_run_summaries_mode'), 'run_summaries', ['mode'], unique=False)

    op.create_table(
        'verification_reports',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('mechanism', sa.String(), nullable=False),
        sa.Column('dsic_regret_max', sa.Float(), nullable=False),
        sa.Column('ir_regret_mean', sa.Float(), nullable=False),
        sa.Column('ir_regret_max', sa.Float(), nullable=False),
        sa.Column('revenue_mean', sa.Float(), nullable=False),
        sa.Column('revenue_post_processed', sa.Float(), nullable=False),
        sa.Column('min_utility', sa.Float(), nullable=False),
        sa.Column('pay_ama_mean', sa.Float(), nullable=False),
        sa.Column('pay_cor_mean', sa.Float(), nullable=False),
        sa.Column('sample_count', sa.Integer(), nullable=False),
        sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
        sa.PrimaryKeyConstraint('id'),
    )
    op.create_index(op.f('ix_verification_reports_id'), 'verification_reports', ['id'], unique=False)
    op.create_index(op.f('ix_verification_reports_mechanism'), 'verification_reports', ['mechanism'], unique=False)


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_index(op.f('ix_verification_reports_mechanism'), table_name='verification_reports')
    op.drop_index(op.f('ix_verification_reports_id'), table_name='verification_reports')
    op.drop_table('verification_reports')
    op.drop_index(op.f('ix_run_summaries_mode'), table_name='run_summaries')
    op.drop_index(op.f('ix_run_summaries_experiment'), table_name='run_summaries')
    op.drop_index(op.f('ix_run_summaries_id'), table_name='run_summaries')
    op.drop_table('run_summaries')
