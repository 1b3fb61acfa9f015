"""C2-smoothed stadium billiards: periodic orbits and their stability."""
