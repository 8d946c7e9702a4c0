# 工具包：指标、模型持久化与报告
