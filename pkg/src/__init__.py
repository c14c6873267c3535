"""Rating-targeted securities lending haircuts and indemnification pricing."""
