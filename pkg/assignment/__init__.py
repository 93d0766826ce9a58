from .matching import FORBIDDEN, hungarian, greedy_match, total_cost
