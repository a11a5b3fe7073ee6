"""Kähler-Ricci flow of U(n)-invariant metrics on CP^n."""
