"""SQL persistence of cellfree experiment results."""
