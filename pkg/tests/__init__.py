"""worstenroll tests package."""
