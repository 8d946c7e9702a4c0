"""
auction包 - 可认证的学习型拍卖机制
版本: 1.0.0
"""

__version__ = "1.0.0"
__author__ = "Certifiable Auction Team"
