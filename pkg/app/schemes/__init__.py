"""HDG 이산화 스킴 (primal / mixed)"""
