# 实验包：桌面规模的主结果表与扩展实验
