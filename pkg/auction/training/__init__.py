# 训练包：数据集、误报搜索、拉格朗日损失、IBP正则、蒸馏与训练循环
